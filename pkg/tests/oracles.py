"""Independent conjugate oracles shared by the test modules."""

import numpy as np

from magduality.legendre import Convexity, diamond_transform, numeric_conjugate, smooth_conjugate
from magduality.materials import (
    AnisotropicMixed,
    Diamagnet,
    Langevin,
    Paramagnet,
    PermanentMagnet,
    SoftSaturation,
)


def admissible_models():
    return [Paramagnet(2.0), Diamagnet(0.5), AnisotropicMixed(2.0, 0.5),
            PermanentMagnet([0.0, 0.0, 1.0]), SoftSaturation(1.0), Langevin(1.0, 1.0)]


def oracle_psi_conjugate(model, b) -> float:
    """Brute-force ``Ψ̂◇(b)`` that never touches the closed forms."""
    f = model.psi_function()
    if f.convexity is Convexity.CONVEX:
        return numeric_conjugate(f, b)
    if f.convexity is Convexity.CONCAVE:
        return diamond_transform(f, b)
    # saddle: smooth transform with a root-finding gradient inverse
    return float(smooth_conjugate(model.oracle_psi_function(), b))


def probes(rng, n, radius=3.0):
    d = rng.standard_normal((n, 3))
    d /= np.linalg.norm(d, axis=1, keepdims=True)
    return d * radius * rng.uniform(0, 1, (n, 1)) ** (1 / 3)
