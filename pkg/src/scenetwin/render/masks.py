"""Object+shadow mask extraction for background plate preparation."""

import numpy as np
from scipy import ndimage

from ..errors import RenderError
from ..scene import MaskImage

_LUMA = np.array([0.299, 0.587, 0.114])
_EIGHT_CONNECTED = np.ones((3, 3), dtype=int)


def extract_shadow_mask(image, object_mask, brightness_threshold=0.25, kernel_size=50):
    """Mask covering an object and its attached shadow, dilated for inpainting.

    Pixels darker than the brightness threshold form the shadow candidate
    set; its union with the object mask is decomposed into 8-connected
    components, the largest component touching the object is kept, and the
    result is dilated with a square kernel (default 50 px). With no dark
    pixels this degenerates to the dilated object mask.
    """
    if object_mask.count() == 0:
        raise RenderError("extract_shadow_mask: object mask is empty")
    img = np.asarray(image, dtype=np.float64)
    if img.shape[:2] != object_mask.values.shape:
        raise RenderError("extract_shadow_mask: image and mask dimensions differ")
    luma = img @ _LUMA
    dark = luma < brightness_threshold
    union = dark | object_mask.values
    labels, count = ndimage.label(union, structure=_EIGHT_CONNECTED)
    touching = np.unique(labels[object_mask.values])
    touching = touching[touching > 0]
    sizes = np.bincount(labels.ravel(), minlength=count + 1)
    best = touching[np.argmax(sizes[touching])]
    component = labels == best
    dilated = ndimage.maximum_filter(component.astype(np.uint8), size=kernel_size) > 0
    return MaskImage(dilated)
