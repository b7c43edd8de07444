"""Exception hierarchy shared across the package.

The CLI maps these onto process exit codes, so raising the right class
matters more than the message wording.
"""


class SceneTwinError(Exception):
    """Base class for all library errors."""


class ConfigError(SceneTwinError):
    """Bad configuration, bad asset references, or invalid domain values."""


class RegistrationError(SceneTwinError):
    """Pose estimation failed (degenerate input, out-of-view init, ...)."""


class SamplingError(SceneTwinError):
    """Particle sampling failed (open mesh, empty result, out of domain)."""


class DivergenceError(SceneTwinError):
    """Simulation produced non-finite state."""

    def __init__(self, message, last_good_frame=None):
        super().__init__(message)
        self.last_good_frame = last_good_frame


class RenderError(SceneTwinError):
    """Rendering or compositing failed."""
