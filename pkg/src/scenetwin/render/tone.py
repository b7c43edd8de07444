"""Cubic tone curve y = a x^3 + b x^2 + c x with y(0)=0 and y(1)=1.

The constraints are structural: we store (a, b), evaluate through the
form x + a (x^3 - x) + b (x^2 - x), and define c = 1 - a - b, so the
endpoints hold exactly regardless of fit noise.
"""

import warnings
from dataclasses import dataclass

import numpy as np

from ..errors import RenderError


@dataclass
class ToneCurve:
    a: float = 0.0
    b: float = 0.0

    @property
    def c(self):
        return 1.0 - self.a - self.b

    @classmethod
    def identity(cls):
        return cls(0.0, 0.0)

    def __call__(self, x):
        x = np.asarray(x, dtype=np.float64)
        return x + self.a * (x**3 - x) + self.b * (x**2 - x)

    def is_monotone(self, samples=257):
        x = np.linspace(0.0, 1.0, samples)
        dy = 3.0 * self.a * x**2 + 2.0 * self.b * x + self.c
        return bool(np.all(dy >= -1e-12))


def fit_tone_curve(rendered, observed):
    """Least-squares cubic fit of observed ~ y(rendered) under the endpoint constraints.

    Needs >= 2 sample pairs with enough spread in the rendered values;
    rank-deficient systems raise with a hint to provide more samples.
    Warns (does not fail) when the fitted curve is non-monotone on [0,1].
    """
    x = np.asarray(rendered, dtype=np.float64).ravel()
    y = np.asarray(observed, dtype=np.float64).ravel()
    if x.shape != y.shape:
        raise RenderError("tone curve fit: sample arrays differ in length")
    if x.size < 2:
        raise RenderError("tone curve fit needs at least 2 sample pairs")
    design = np.stack([x**3 - x, x**2 - x], axis=1)
    coeffs, _, rank, _ = np.linalg.lstsq(design, y - x, rcond=None)
    if rank < 2:
        raise RenderError(
            "tone curve fit is rank-deficient; provide more samples with "
            "varied rendered values"
        )
    curve = ToneCurve(a=float(coeffs[0]), b=float(coeffs[1]))
    if not curve.is_monotone():
        warnings.warn("fitted tone curve is not monotone on [0,1]")
    return curve


def apply_tone_curve(curve, image):
    """Per-channel application, clamped to [0,1]."""
    return np.clip(curve(np.asarray(image, dtype=np.float64)), 0.0, 1.0)
