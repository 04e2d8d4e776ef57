"""Closed-form single-site references (linear-plus-quadratic mechanism).

For one site with mechanism b z + c z^2 (b, c > 0) the mass flow is a
Riccati equation with explicit solution; these formulas are the ground
truth the numerical modules are tested against.  Their own certification
(symbolic substitution into the flow equation and a high-precision solve)
lives in the oracle test tier, which runs before anything that depends on
them.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .model import (
    BranchingMechanism,
    RateMatrix,
    StateSpace,
    SuperprocessModel,
)

__all__ = [
    "FellerParams",
    "feller_cumulant",
    "feller_extinction",
    "feller_yaglom",
    "feller_model",
]


@dataclass(frozen=True)
class FellerParams:
    """Mechanism b z + c z^2, i.e. beta = -b and sigma^2 = c."""

    b: float = 1.0
    c: float = 1.0

    def __post_init__(self):
        if not (self.b > 0 and self.c > 0):
            raise ValueError(f"b and c must be > 0 (got b={self.b}, c={self.c})")


def feller_cumulant(p: FellerParams, f: float, t: float) -> float:
    """Mass-flow solution u_t(f) = b f e^{-bt} / (b + c f (1 - e^{-bt}))."""
    if f < 0 or t < 0:
        raise ValueError(f"need f, t >= 0 (got f={f}, t={t})")
    e = math.exp(-p.b * t)
    om = -math.expm1(-p.b * t)  # 1 - e^{-bt} without cancellation
    return p.b * f * e / (p.b + p.c * f * om)


def feller_extinction(p: FellerParams, t: float) -> float:
    """Large-f limit of the mass flow: b e^{-bt} / (c (1 - e^{-bt}))."""
    if not t > 0:
        raise ValueError(f"need t > 0 (got {t})")
    e = math.exp(-p.b * t)
    om = -math.expm1(-p.b * t)
    return p.b * e / (p.c * om)


def feller_yaglom(p: FellerParams, f: float) -> float:
    """Survival-conditioned limit value c f / (b + c f) in [0, 1].

    The limiting law is Exponential with rate b/c, so this is also
    1 - 1/(1 + (c/b) f); f = +inf gives the total-mass limit 1.
    """
    if f < 0:
        raise ValueError(f"need f >= 0 (got {f})")
    if math.isinf(f):
        return 1.0
    return p.c * f / (p.b + p.c * f)


def feller_model(p: FellerParams = FellerParams()) -> SuperprocessModel:
    """The 1-site model matching the closed forms: q = [[0]], beta = -b, sigma = sqrt(c)."""
    return SuperprocessModel(
        space=StateSpace(("site",)),
        rates=RateMatrix(np.array([[0.0]])),
        mech=BranchingMechanism(
            np.array([-p.b]), np.array([math.sqrt(p.c)]), ((),)
        ),
    )
