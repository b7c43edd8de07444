"""Final frame assembly: shaded objects over a shadowed background plate."""

import numpy as np

from ..assets import quantize_u8
from ..errors import RenderError


def composite_frame(background, object_layer, shadow_factor):
    """out = background * shadow where uncovered, object color where covered.

    Object pixels take precedence over shadow darkening. All inputs are
    float in [0,1]; the result is quantized to uint8 with round-half-to-
    even as the very last step.
    """
    bg = np.asarray(background, dtype=np.float64)
    shadow = np.asarray(shadow_factor, dtype=np.float64)
    if bg.shape[:2] != shadow.shape or bg.shape[:2] != object_layer.alpha.shape:
        raise RenderError(
            f"composite_frame: resolution mismatch "
            f"(background {bg.shape[:2]}, shadow {shadow.shape}, "
            f"objects {object_layer.alpha.shape})"
        )
    out = bg * shadow[:, :, None]
    out[object_layer.alpha] = object_layer.color[object_layer.alpha]
    return quantize_u8(out)
