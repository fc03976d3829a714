"""Nonlinear softening bond law (exponential decay with a linear tail).

A bond is linear elastic up to the stretch ``s0 = f_t / E``; beyond it the
softening parameter ``d`` rises from 0 to 1 at the critical stretch ``sc``.
``k`` sets how fast the exponential part decays and ``alpha`` how much of
the force is carried by the linear term that pins the curve to ``sc``.
Closed-form bond energy, fracture energy and critical stretch follow.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

PROBLEM_KINDS = ("plane_stress", "plane_strain", "three_d")
POISSON_RATIO = {"plane_stress": 1.0 / 3.0, "plane_strain": 0.25, "three_d": 0.25}


class FractureEnergyError(ValueError):
    """Elastic energy exceeds the available fracture energy (``sc <= s0``)."""


@dataclass(frozen=True)
class ProblemKind:
    kind: str = "plane_stress"
    thickness: float | None = None

    def __post_init__(self):
        if self.kind not in PROBLEM_KINDS:
            raise ValueError(f"unknown problem kind {self.kind!r}")
        if self.kind != "three_d" and (self.thickness is None or self.thickness <= 0):
            raise ValueError(f"{self.kind} needs a positive thickness")

    @property
    def poisson_ratio(self) -> float:
        return POISSON_RATIO[self.kind]


@dataclass(frozen=True)
class SofteningLaw:
    c: float
    s0: float
    sc: float
    k: float = 25.0
    alpha: float = 0.25

    def __post_init__(self):
        if not (0 < self.s0 < self.sc):
            raise ValueError(f"need 0 < s0 < sc, got s0={self.s0}, sc={self.sc}")
        if self.k <= 0 or self.alpha < 0 or self.c <= 0:
            raise ValueError("need k > 0, alpha >= 0, c > 0")


def bond_stiffness(E, delta, kind: ProblemKind):
    """Micromodulus matching the continuum strain energy density."""
    if kind.kind == "three_d":
        return 12.0 * E / (math.pi * delta**4)
    t = kind.thickness
    if kind.kind == "plane_stress":
        return 9.0 * E / (math.pi * t * delta**3)
    return 48.0 * E / (5.0 * math.pi * t * delta**3)


def softening_shape(t, k, alpha):
    """Bracketed term of the damage law at normalised position ``t`` in [0, 1]."""
    return 1.0 - np.expm1(-k * t) / np.expm1(-k) + alpha * (1.0 - t)


def _damage(s, s0, sc, k, alpha):
    s = np.asarray(s, dtype=float)
    t = np.clip((s - s0) / (sc - s0), 0.0, 1.0)
    with np.errstate(divide="ignore", invalid="ignore"):
        d = 1.0 - (s0 / s) * softening_shape(t, k, alpha) / (1.0 + alpha)
    return np.where(s <= s0, 0.0, np.where(s >= sc, 1.0, d))


def damage(s, law: SofteningLaw):
    return _damage(s, law.s0, law.sc, law.k, law.alpha)


def bond_force_scalar(s, law: SofteningLaw):
    """Scalar bond force for monotone loading; zero at and beyond ``sc``."""
    s = np.asarray(s, dtype=float)
    return law.c * (1.0 - damage(s, law)) * s


def softening_integral(k, alpha):
    """Integral of the bracketed term over t in [0, 1]."""
    return 1.0 / k - 1.0 / math.expm1(k) + 0.5 * alpha


def _energy_polynomial(k, alpha):
    e = math.exp(k)
    return 2 * k - 2 * e + alpha * k - alpha * k * e + 2


def bond_energy(law: SofteningLaw, xi):
    """Work dissipated by one bond of length ``xi`` between ``s0`` and ``sc``."""
    k, a = law.k, law.alpha
    return (
        law.c * law.s0 * xi * (law.s0 - law.sc) * _energy_polynomial(k, a)
        / (2 * k * math.expm1(k) * (1 + a))
    )


def fracture_energy(c, delta, s0, sc, k, alpha, kind: ProblemKind):
    """Energy per unit crack area from all bonds crossing a plane."""
    per_length = c * s0 * (sc - s0) * softening_integral(k, alpha) / (1 + alpha)
    if kind.kind == "three_d":
        return math.pi * per_length * delta**5 / 5.0
    return kind.thickness * per_length * delta**4 / 2.0


def critical_stretch(GF, E, delta, s0, k, alpha, kind: ProblemKind):
    """Invert :func:`fracture_energy` for ``sc``."""
    c = bond_stiffness(E, delta, kind)
    g = softening_integral(k, alpha)
    if kind.kind == "three_d":
        extra = 5.0 * (1 + alpha) * GF / (math.pi * c * s0 * g * delta**5)
    else:
        extra = 2.0 * (1 + alpha) * GF / (kind.thickness * c * s0 * g * delta**4)
    sc = s0 + extra
    if not np.all(extra > 0) or not np.all(np.isfinite(sc)):
        raise FractureEnergyError("elastic energy exceeds fracture energy")
    return sc


def critical_stretch_array(GF, E, delta, s0, k, alpha, kind: ProblemKind) -> np.ndarray:
    """Vectorised form used per bond; same closed form as :func:`critical_stretch`."""
    GF, E, s0 = (np.asarray(v, dtype=float) for v in (GF, E, s0))
    return critical_stretch(GF, E, delta, s0, k, alpha, kind)


def make_law(E, ft, GF, delta, kind: ProblemKind, k=25.0, alpha=0.25) -> SofteningLaw:
    s0 = ft / E
    return SofteningLaw(
        c=bond_stiffness(E, delta, kind),
        s0=s0,
        sc=float(critical_stretch(GF, E, delta, s0, k, alpha, kind)),
        k=k,
        alpha=alpha,
    )
