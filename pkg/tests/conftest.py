import numpy as np

from a3r.geometry import RigidTransform


def random_rotation(rng: np.random.Generator) -> np.ndarray:
    """Uniform random rotation matrix via sign-fixed QR."""
    q, r = np.linalg.qr(rng.standard_normal((3, 3)))
    q = q * np.sign(np.diag(r))
    if np.linalg.det(q) < 0:
        q[:, 0] = -q[:, 0]
    return q


def random_transform(rng: np.random.Generator) -> RigidTransform:
    return RigidTransform(random_rotation(rng), rng.standard_normal(3))


def rel_err(analytic: float, numeric: float, floor: float = 1e-3) -> float:
    """Relative error with a floor so near-zero gradients compare sanely."""
    return abs(analytic - numeric) / max(floor, abs(analytic), abs(numeric))


def central_difference(f, param: np.ndarray, index, h: float = 1e-6) -> float:
    """Two-sided difference of scalar f wrt one entry of a parameter array."""
    orig = param[index]
    param[index] = orig + h
    up = f()
    param[index] = orig - h
    down = f()
    param[index] = orig
    return (up - down) / (2.0 * h)


def check_gradients(f, store, names=None, h: float = 1e-6, tol: float = 1e-5,
                    max_entries: int | None = None,
                    rng: np.random.Generator | None = None) -> float:
    """Compare analytic grads in ``store`` against central differences.

    ``f`` recomputes the scalar loss AND refills the gradients. Returns
    the worst relative error seen.
    """
    f()
    analytic = {name: store[name].grad.copy() for name in (names or store.names())}
    worst = 0.0
    for name, grads in analytic.items():
        value = store[name].value
        entries = list(np.ndindex(value.shape))
        if max_entries is not None and len(entries) > max_entries:
            assert rng is not None
            picks = rng.choice(len(entries), size=max_entries, replace=False)
            entries = [entries[int(i)] for i in picks]
        for index in entries:
            numeric = central_difference(lambda: f(), value, index, h)
            err = rel_err(float(grads[index]), numeric)
            worst = max(worst, err)
            assert err < tol, (
                f"{name}{list(index)}: analytic {grads[index]:.8e} vs "
                f"numeric {numeric:.8e} (rel {err:.2e})"
            )
    return worst
