"""Rendering and compositing: shadow catcher, two-pass shadows, shading."""

from ..heightfields import build_shadow_catcher, collider_surface_mesh
from .composite import composite_frame
from .masks import extract_shadow_mask
from .shading import ObjectLayer, shade_objects
from .shadow import ShadowMap, build_shadow_map, render_shadow_factor
from .tone import ToneCurve, apply_tone_curve, fit_tone_curve

__all__ = [
    "ObjectLayer",
    "ShadowMap",
    "ToneCurve",
    "apply_tone_curve",
    "build_shadow_catcher",
    "build_shadow_map",
    "collider_surface_mesh",
    "composite_frame",
    "extract_shadow_mask",
    "fit_tone_curve",
    "render_shadow_factor",
    "shade_objects",
]
