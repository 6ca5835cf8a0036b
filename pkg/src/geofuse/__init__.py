"""geofuse: cross-view 3D feature injection for a toy decoder, end to end.

A small, dependency-light lab for one idea: take frozen per-view 3D feature
grids, fuse them into the visual hidden states of a frozen-ish autoregressive
decoder through per-layer cross-attention adapters, and measure whether that
rescues a task the 2D token stream cannot solve. Everything runs in float64
on a handmade reverse-mode tape so gradients can be checked against finite
differences.
"""

from .autodiff import Parameter, Tensor, backward, grad_check, zero_grads
from .errors import (
    ConfigError,
    ContractError,
    GenerationError,
    GeofuseError,
    NumericError,
    ShapeError,
    ValidationError,
)
from .geometry import (
    CameraRig,
    CameraView,
    camera_token,
    camera_token_matrix,
    compose_lidar2img,
    default_rig,
    img2lidar,
    invert4,
    lidar2img,
    rig_camera_tokens,
    scale_intrinsics,
)
from .model import (
    SCHEMES,
    CrossViewFuser,
    Model,
    ModelConfig,
    SchemeConfig,
    load_checkpoint,
    load_model,
    save_checkpoint,
)
from .scene import (
    Feature3D,
    ProviderTables,
    SceneConfig,
    SceneSample,
    TokenLayout,
    build_sequence,
    generate_corpus,
    generate_scene,
    provide_3d,
)
from .scoring import SubScores, avg3, avg_nuinstruct, pdms, pdms_aggregate
from .training import TrainConfig, ce_loss, distill_loss, evaluate, prepare, train

__version__ = "0.1.0"

__all__ = [
    "Parameter",
    "Tensor",
    "backward",
    "grad_check",
    "zero_grads",
    "GeofuseError",
    "ShapeError",
    "ConfigError",
    "ContractError",
    "NumericError",
    "GenerationError",
    "ValidationError",
    "CameraView",
    "CameraRig",
    "scale_intrinsics",
    "compose_lidar2img",
    "invert4",
    "lidar2img",
    "img2lidar",
    "camera_token",
    "camera_token_matrix",
    "rig_camera_tokens",
    "default_rig",
    "SceneConfig",
    "SceneSample",
    "TokenLayout",
    "Feature3D",
    "ProviderTables",
    "generate_scene",
    "generate_corpus",
    "provide_3d",
    "build_sequence",
    "SCHEMES",
    "SchemeConfig",
    "ModelConfig",
    "CrossViewFuser",
    "Model",
    "save_checkpoint",
    "load_checkpoint",
    "load_model",
    "TrainConfig",
    "ce_loss",
    "distill_loss",
    "prepare",
    "train",
    "evaluate",
    "SubScores",
    "pdms",
    "pdms_aggregate",
    "avg_nuinstruct",
    "avg3",
    "__version__",
]
