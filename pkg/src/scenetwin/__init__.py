"""scenetwin: single-image fixture assets -> registered, simulatable,
renderable 3D scene."""

from .config import (
    configs_equal,
    load_scene_config,
    parse_scene_config,
    serialize_scene_config,
    validate_scene,
)
from .errors import (
    ConfigError,
    DivergenceError,
    RegistrationError,
    RenderError,
    SamplingError,
    SceneTwinError,
)
from .scene import (
    CameraIntrinsics,
    ColliderSurface,
    DepthImage,
    LightSpec,
    MaskImage,
    MaterialSpec,
    PoseEstimate,
    ScaleModel,
    SceneConfig,
    SimParams,
    TriangleMesh,
    elasticity_from_category,
)

__version__ = "0.1.0"
