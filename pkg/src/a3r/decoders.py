"""Toy action decoders: the three loss heads, Adam, and the train loop.

The heads are small dense networks rather than full sequence models;
they exercise the exact loss formulas (Gaussian NLL, denoising MSE on a
cosine noise schedule, CVAE reconstruction + KL) conditioned on the
scene encoding z, the proprioception encoding u, and the language
embedding. Everything trains end-to-end through the encoder pipeline.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, DimensionMismatch, NonFiniteError
from .nets import DenseNet
from .params import ParamStore
from .pipeline import EncoderPipeline

LOG_2PI = math.log(2.0 * math.pi)


@dataclass(frozen=True, eq=False)
class ActionChunk:
    actions: np.ndarray  # (H, a_dim)

    def __post_init__(self):
        arr = np.asarray(self.actions, dtype=np.float64)
        if arr.ndim != 2 or arr.shape[0] < 1:
            raise DimensionMismatch("actions must be (H, a_dim) with H >= 1")
        if not np.all(np.isfinite(arr)):
            raise ConfigError("action chunk contains non-finite values")
        object.__setattr__(self, "actions", arr)


@dataclass(frozen=True)
class TrainConfig:
    lr: float = 1e-4
    weight_decay: float = 1e-4
    batch: int = 64
    grad_clip: float = 100.0
    epochs: int = 100
    schedule: str = "cosine"
    seed: int = 0

    def __post_init__(self):
        if self.lr < 0:
            raise ConfigError("lr must be non-negative")
        if self.schedule != "cosine":
            raise ConfigError(f"unknown schedule {self.schedule!r}")


@dataclass(frozen=True, eq=False)
class GaussianChunk:
    """Diagonal Gaussian over action chunks."""
    mean: np.ndarray
    std: np.ndarray


def _chunk_array(chunk) -> np.ndarray:
    return chunk.actions if isinstance(chunk, ActionChunk) else np.asarray(chunk)


def nll_loss(chunk, gaussian: GaussianChunk) -> float:
    """Negative log density of the chunk under a diagonal Gaussian."""
    x = _chunk_array(chunk)
    mean, std = np.asarray(gaussian.mean), np.asarray(gaussian.std)
    if mean.shape != x.shape or std.shape != x.shape:
        raise DimensionMismatch("Gaussian parameters must match the chunk shape")
    if np.any(std <= 0):
        raise ConfigError("predicted std must be positive")
    resid = (x - mean) / std
    return float(np.sum(0.5 * LOG_2PI + np.log(std) + 0.5 * resid * resid))


def kl_to_standard_normal(mean: np.ndarray, log_std: np.ndarray) -> float:
    """Closed-form KL(N(mean, exp(log_std)^2) || N(0, I)), summed over dims."""
    var = np.exp(2.0 * np.asarray(log_std))
    return float(0.5 * np.sum(np.asarray(mean) ** 2 + var - 1.0 - 2.0 * np.asarray(log_std)))


def cosine_lr(lr_max: float, step: int, total_steps: int) -> float:
    """Cosine annealing from lr_max at step 0 toward 0 at total_steps."""
    if total_steps <= 0:
        return lr_max
    return lr_max * 0.5 * (1.0 + math.cos(math.pi * min(step, total_steps) / total_steps))


class CosineNoiseSchedule:
    """squaredcos_cap_v2 beta schedule; signal rate is the cumulative
    product of (1 - beta)."""

    def __init__(self, train_steps: int = 100, max_beta: float = 0.999):
        self.train_steps = train_steps

        def alpha_bar(t):
            return math.cos((t + 0.008) / 1.008 * math.pi / 2.0) ** 2

        betas = [
            min(1.0 - alpha_bar((i + 1) / train_steps) / alpha_bar(i / train_steps),
                max_beta)
            for i in range(train_steps)
        ]
        self.alphas_cumprod = np.cumprod(1.0 - np.asarray(betas))

    def signal_rate(self, step: int) -> float:
        """Cumulative signal rate at diffusion step k in [1, K]."""
        if not 1 <= step <= self.train_steps:
            raise ConfigError(
                f"diffusion step {step} outside [1, {self.train_steps}]"
            )
        return float(self.alphas_cumprod[step - 1])

    def mixing(self, step: int) -> tuple[float, float]:
        """(signal coefficient, noise coefficient) for the noised chunk."""
        a_bar = self.signal_rate(step)
        return math.sqrt(a_bar), math.sqrt(1.0 - a_bar)


def diffusion_denoise_loss(chunk, noise: np.ndarray, step: int, cond: np.ndarray,
                           net: DenseNet,
                           schedule: CosineNoiseSchedule) -> float:
    """MSE between the injected noise and the net's prediction on the
    noised chunk, with step and conditioning concatenated onto the input."""
    x = _chunk_array(chunk)
    sig, noi = schedule.mixing(step)
    noised = sig * x + noi * np.asarray(noise)
    net_in = np.concatenate([noised.reshape(-1),
                             [step / schedule.train_steps], cond])
    pred = net.forward(net_in)
    resid = pred - np.asarray(noise).reshape(-1)
    return float(np.mean(resid * resid))


def cvae_loss(chunk, z: np.ndarray, u: np.ndarray | None, lang: np.ndarray,
              encoder_net: DenseNet, decoder_net: DenseNet, beta: float,
              latent_noise: np.ndarray) -> float:
    """Reconstruction MSE plus beta-weighted KL of the latent posterior."""
    x = _chunk_array(chunk).reshape(-1)
    zu = z if u is None else np.concatenate([z, u])
    enc_out = encoder_net.forward(np.concatenate([x, zu]))
    latent_dim = enc_out.shape[0] // 2
    mu, log_std = enc_out[:latent_dim], enc_out[latent_dim:]
    eta = mu + np.exp(log_std) * np.asarray(latent_noise)
    recon = decoder_net.forward(np.concatenate([zu, lang, eta]))
    resid = recon - x
    return float(np.mean(resid * resid) + beta * kl_to_standard_normal(mu, log_std))


class ProprioEncoder:
    """One hidden layer of width d_e mapping proprioception to u."""

    def __init__(self, store: ParamStore, in_dim: int, embed_dim: int,
                 rng: np.random.Generator, dtype=np.float64):
        self.net = DenseNet(store, "proprio", [in_dim, embed_dim, embed_dim],
                            rng, dtype)

    def forward(self, vec: np.ndarray, cache: list | None = None) -> np.ndarray:
        return self.net.forward(vec, cache)

    def backward(self, d_out: np.ndarray, cache: list) -> np.ndarray:
        return self.net.backward(d_out, cache)


class NllHead:
    """Gaussian chunk head trained with the NLL objective."""

    name = "nll"

    def __init__(self, store, cond_dim, chunk_shape, hidden, rng, dtype=np.float64):
        self.chunk_shape = tuple(chunk_shape)
        n_out = 2 * int(np.prod(chunk_shape))
        self.net = DenseNet(store, "head.nll", [cond_dim, hidden, n_out], rng, dtype)

    def predict(self, cond: np.ndarray) -> GaussianChunk:
        out = self.net.forward(cond)
        half = out.shape[0] // 2
        return GaussianChunk(mean=out[:half].reshape(self.chunk_shape),
                             std=np.exp(out[half:]).reshape(self.chunk_shape))

    def loss_and_grad(self, cond, chunk, rng) -> tuple[float, np.ndarray]:
        x = _chunk_array(chunk).reshape(-1)
        cache = []
        out = self.net.forward(cond, cache)
        half = out.shape[0] // 2
        mean, log_std = out[:half], out[half:]
        inv_var = np.exp(-2.0 * log_std)
        resid = x - mean
        loss = float(np.sum(0.5 * LOG_2PI + log_std + 0.5 * resid * resid * inv_var))
        d_out = np.concatenate([-resid * inv_var,
                                1.0 - resid * resid * inv_var])
        return loss, self.net.backward(d_out, cache)


class DiffusionHead:
    """Noise-prediction head trained with the denoising MSE."""

    name = "diffusion"

    def __init__(self, store, cond_dim, chunk_shape, hidden, rng,
                 dtype=np.float64, train_steps: int = 100):
        self.chunk_shape = tuple(chunk_shape)
        self.chunk_size = int(np.prod(chunk_shape))
        self.schedule = CosineNoiseSchedule(train_steps)
        self.net = DenseNet(store, "head.diffusion",
                            [self.chunk_size + 1 + cond_dim, hidden,
                             self.chunk_size], rng, dtype)

    def loss_and_grad(self, cond, chunk, rng) -> tuple[float, np.ndarray]:
        x = _chunk_array(chunk)
        step = int(rng.integers(1, self.schedule.train_steps + 1))
        noise = rng.standard_normal(x.shape)
        sig, noi = self.schedule.mixing(step)
        noised = sig * x + noi * noise
        net_in = np.concatenate([noised.reshape(-1),
                                 [step / self.schedule.train_steps], cond])
        cache = []
        pred = self.net.forward(net_in, cache)
        resid = pred - noise.reshape(-1)
        loss = float(np.mean(resid * resid))
        d_in = self.net.backward(2.0 * resid / resid.size, cache)
        return loss, d_in[self.chunk_size + 1:]


class CvaeHead:
    """CVAE head: latent encoder plus reconstruction decoder."""

    name = "cvae"

    def __init__(self, store, cond_dim, zu_dim, chunk_shape, hidden, rng,
                 dtype=np.float64, latent_dim: int = 8, beta: float = 10.0):
        self.chunk_shape = tuple(chunk_shape)
        self.chunk_size = int(np.prod(chunk_shape))
        self.zu_dim = zu_dim  # encoder conditions on (chunk, z, u), not language
        self.latent_dim = latent_dim
        self.beta = beta
        self.encoder_net = DenseNet(store, "head.cvae_enc",
                                    [self.chunk_size + zu_dim, hidden,
                                     2 * latent_dim], rng, dtype)
        self.decoder_net = DenseNet(store, "head.cvae_dec",
                                    [cond_dim + latent_dim, hidden,
                                     self.chunk_size], rng, dtype)

    def loss_and_grad(self, cond, chunk, rng) -> tuple[float, np.ndarray]:
        x = _chunk_array(chunk).reshape(-1)
        zu = cond[: self.zu_dim]
        xi = rng.standard_normal(self.latent_dim)
        enc_cache = []
        enc_out = self.encoder_net.forward(np.concatenate([x, zu]), enc_cache)
        mu, log_std = enc_out[: self.latent_dim], enc_out[self.latent_dim:]
        std = np.exp(log_std)
        eta = mu + std * xi
        dec_cache = []
        recon = self.decoder_net.forward(np.concatenate([cond, eta]), dec_cache)
        resid = recon - x
        kl = 0.5 * np.sum(mu * mu + std * std - 1.0 - 2.0 * log_std)
        loss = float(np.mean(resid * resid) + self.beta * kl)

        d_recon = 2.0 * resid / resid.size
        d_dec_in = self.decoder_net.backward(d_recon, dec_cache)
        d_cond = d_dec_in[: -self.latent_dim].copy()
        d_eta = d_dec_in[-self.latent_dim:]
        d_mu = d_eta + self.beta * mu
        d_log_std = d_eta * std * xi + self.beta * (std * std - 1.0)
        d_enc_in = self.encoder_net.backward(
            np.concatenate([d_mu, d_log_std]), enc_cache)
        d_cond[: self.zu_dim] += d_enc_in[self.chunk_size:]
        return loss, d_cond


HEADS = {"nll": NllHead, "diffusion": DiffusionHead, "cvae": CvaeHead}


class Adam:
    """Adam with L2 weight decay and global-norm gradient clipping."""

    def __init__(self, store: ParamStore, beta1: float = 0.9,
                 beta2: float = 0.999, eps: float = 1e-8):
        self.store = store
        self.beta1, self.beta2, self.eps = beta1, beta2, eps
        self.m = {name: np.zeros_like(store[name].value) for name in store.names()}
        self.v = {name: np.zeros_like(store[name].value) for name in store.names()}
        self.t = 0

    def step(self, lr: float, weight_decay: float = 0.0,
             grad_clip: float | None = None) -> None:
        scale = 1.0
        if grad_clip is not None:
            gnorm = self.store.grad_global_norm()
            if gnorm > grad_clip:
                scale = grad_clip / gnorm
        self.t += 1
        bc1 = 1.0 - self.beta1 ** self.t
        bc2 = 1.0 - self.beta2 ** self.t
        for name in self.store.names():
            param = self.store[name]
            g = param.grad * scale + weight_decay * param.value
            m = self.m[name]
            v = self.v[name]
            m += (1.0 - self.beta1) * (g - m)
            v += (1.0 - self.beta2) * (g * g - v)
            param.value -= lr * (m / bc1) / (np.sqrt(v / bc2) + self.eps)


@dataclass(eq=False)
class TrainResult:
    store: ParamStore
    epoch_losses: list
    epoch_lrs: list
    steps: int


def build_head(store: ParamStore, head_tag: str, cond_dim: int, zu_dim: int,
               chunk_shape, hidden: int, rng, dtype=np.float64):
    if head_tag not in HEADS:
        raise ConfigError(f"unknown head {head_tag!r}; known: {sorted(HEADS)}")
    if head_tag == "cvae":
        return CvaeHead(store, cond_dim, zu_dim, chunk_shape, hidden, rng, dtype)
    return HEADS[head_tag](store, cond_dim, chunk_shape, hidden, rng, dtype)


def train(dataset, pipeline: EncoderPipeline, head_tag: str,
          cfg: TrainConfig) -> TrainResult:
    """Adam + cosine annealing over the reach dataset, end to end.

    Deterministic given cfg.seed: one generator drives initialization
    order, batch sampling, and the stochastic parts of the losses.
    """
    if not len(dataset.episodes):
        raise ConfigError("dataset is empty")
    store = pipeline.store
    enc_cfg = pipeline.cfg
    rng = np.random.default_rng(cfg.seed)
    dtype = enc_cfg.np_dtype

    proprio_dim = dataset.episodes[0].proprio.vector().shape[0]
    proprio_enc = ProprioEncoder(store, proprio_dim, enc_cfg.embed_dim, rng,
                                 dtype) if enc_cfg.use_proprio else None
    zu_dim = enc_cfg.embed_dim * (2 if enc_cfg.use_proprio else 1)
    cond_dim = zu_dim + enc_cfg.feature_dim  # language rides along for all heads
    chunk_shape = dataset.episodes[0].chunk.shape
    head = build_head(store, head_tag, cond_dim, zu_dim, chunk_shape,
                      enc_cfg.embed_dim, rng, dtype)
    optimizer = Adam(store)

    n = len(dataset.episodes)
    steps_per_epoch = max(1, -(-n // cfg.batch))
    total_steps = cfg.epochs * steps_per_epoch
    epoch_losses, epoch_lrs = [], []
    step = 0
    for epoch in range(cfg.epochs):
        losses = []
        for _ in range(steps_per_epoch):
            lr = cosine_lr(cfg.lr, step, total_steps)
            batch_idx = rng.integers(0, n, size=min(cfg.batch, n))
            store.zero_grads()
            batch_loss = 0.0
            for i in batch_idx:
                ep = dataset.episodes[int(i)]
                cache = {}
                encoding = pipeline.encode(ep.frames, ep.proprio,
                                           lang=ep.language, cache=cache)
                lang_vec = pipeline.language_vector(ep.language)
                blocks = [encoding.z]
                pcache = []
                if proprio_enc is not None:
                    u = proprio_enc.forward(
                        ep.proprio.vector().astype(dtype), pcache)
                    blocks.append(u)
                blocks.append(lang_vec)
                cond = np.concatenate(blocks)
                loss, d_cond = head.loss_and_grad(cond, ep.chunk, rng)
                batch_loss += loss
                inv_b = 1.0 / len(batch_idx)
                d_cond = d_cond * inv_b
                pipeline.backward(d_cond[: enc_cfg.embed_dim], cache)
                if proprio_enc is not None:
                    proprio_enc.backward(
                        d_cond[enc_cfg.embed_dim: 2 * enc_cfg.embed_dim], pcache)
            batch_loss /= len(batch_idx)
            if not math.isfinite(batch_loss):
                raise NonFiniteError(f"training diverged at epoch {epoch}")
            losses.append(batch_loss)
            optimizer.step(lr, cfg.weight_decay, cfg.grad_clip)
            step += 1
        epoch_losses.append(float(np.mean(losses)))
        epoch_lrs.append(cosine_lr(cfg.lr, step - 1, total_steps))
    return TrainResult(store=store, epoch_losses=epoch_losses,
                       epoch_lrs=epoch_lrs, steps=step)
