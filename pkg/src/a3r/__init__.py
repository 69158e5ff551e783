"""RGBD multi-camera observations -> one conditioning vector.

Calibrated depth lifts per-pixel semantic features into a fused point
cloud, expressed relative to the end-effector, cropped, reduced by
feature-space farthest-point sampling, and pooled with learned
attention into a single embedding for downstream action decoders.
"""

__version__ = "0.1.0"

from .backbone import (FeatureVolume, LanguageEmbedding, TestBackbone,
                       embed_language, extract_features, load_feature_volume,
                       save_feature_volume)
from .cloud import (CropConfig, FeatureCloud, apply_crops, fuse, to_ee_frame,
                    write_ply)
from .decoders import (ActionChunk, Adam, CosineNoiseSchedule, GaussianChunk,
                       ProprioEncoder, TrainConfig, cosine_lr, cvae_loss,
                       diffusion_denoise_loss, kl_to_standard_normal, nll_loss,
                       train)
from .encoder import (AttentionPool, MaxPool, PositionalEncodingConfig,
                      SceneEncoding, assemble_tokens, positional_encode)
from .errors import (A3RError, ConfigError, DimensionMismatch, FrameError,
                     NonFiniteError)
from .geometry import (CameraFrame, CameraIntrinsics, Proprioception,
                       RigidTransform, deproject, invert, load_calibration,
                       transform_points)
from .params import ParamStore
from .pipeline import VARIANTS, EncoderConfig, EncoderPipeline, apply_variant
from .sampling import (DownsampledCloud, SamplerConfig, farthest_point_sample,
                       gather)
from .scenes import (Box, Episode, Plane, ReachDataset, SceneSpec, Sphere,
                     load_dataset, make_reach_task, render, save_dataset,
                     surface_distance)
