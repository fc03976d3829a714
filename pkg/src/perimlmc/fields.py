"""Correlated random material fields.

Gaussian fields with exponential (or JCSS thresholded exponential)
correlation are drawn by Cholesky factorisation or a truncated
Karhunen-Loeve expansion and pushed through a Gaussian copula onto the
target marginal.  Compressive strength is the random input; stiffness,
tensile strength and fracture energy follow from it deterministically.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass
from typing import Callable

import numpy as np
import scipy.linalg
from scipy.spatial.distance import cdist
from scipy.special import gamma, log_ndtr, ndtr

from .mesh import CoarsenMap


class FieldConfigurationError(RuntimeError):
    """The covariance matrix could not be factorised."""


class ResolutionWarning(UserWarning):
    """Correlation length not resolved by the coarsest grid."""


@dataclass(frozen=True)
class CovarianceSpec:
    kind: str = "exponential"
    lc: float = 0.02
    sigma2: float = 1.0
    rho_threshold: float = 0.5

    def __post_init__(self):
        if self.kind not in ("exponential", "jcss"):
            raise ValueError(f"unknown covariance kind {self.kind!r}")
        if self.lc <= 0 or self.sigma2 <= 0:
            raise ValueError("lc and sigma2 must be positive")
        if not 0.0 <= self.rho_threshold < 1.0:
            raise ValueError("rho_threshold must lie in [0, 1)")

    def correlation(self, dist: np.ndarray) -> np.ndarray:
        rho = np.exp(-np.asarray(dist) / self.lc)
        if self.kind == "jcss":
            rho = self.rho_threshold + (1.0 - self.rho_threshold) * rho
        return self.sigma2 * rho


@dataclass(frozen=True)
class MarginalSpec:
    """Target one-point distribution of the transformed field.

    ``weibull`` uses ``weibull_modulus`` and ``scale``; ``lognormal`` uses
    ``log_mean``/``log_sd``; ``gaussian`` uses ``mean``/``sd``.
    """

    kind: str = "weibull"
    weibull_modulus: float = 3.0
    scale: float = 1.0
    log_mean: float = 0.0
    log_sd: float = 1.0
    mean: float = 0.0
    sd: float = 1.0

    def __post_init__(self):
        if self.kind == "weibull":
            ok = self.weibull_modulus > 0 and self.scale > 0
        elif self.kind == "lognormal":
            ok = self.log_sd > 0
        elif self.kind == "gaussian":
            ok = self.sd > 0
        else:
            raise ValueError(f"unknown marginal kind {self.kind!r}")
        if not ok:
            raise ValueError(f"invalid {self.kind} parameters")

    @classmethod
    def weibull_with_mean(cls, mean: float, modulus: float) -> "MarginalSpec":
        return cls("weibull", weibull_modulus=modulus, scale=mean / gamma(1.0 + 1.0 / modulus))

    @classmethod
    def gaussian_matching(cls, other: "MarginalSpec") -> "MarginalSpec":
        """Gaussian with the same mean and standard deviation as ``other``."""
        return cls("gaussian", mean=other.distribution_mean(), sd=other.distribution_sd())

    def distribution_mean(self) -> float:
        if self.kind == "weibull":
            return self.scale * gamma(1.0 + 1.0 / self.weibull_modulus)
        if self.kind == "lognormal":
            return math.exp(self.log_mean + 0.5 * self.log_sd**2)
        return self.mean

    def distribution_sd(self) -> float:
        if self.kind == "weibull":
            m = self.weibull_modulus
            return self.scale * math.sqrt(gamma(1 + 2 / m) - gamma(1 + 1 / m) ** 2)
        if self.kind == "lognormal":
            s2 = self.log_sd**2
            return math.sqrt((math.exp(s2) - 1.0) * math.exp(2 * self.log_mean + s2))
        return self.sd

    def cdf(self, v: np.ndarray) -> np.ndarray:
        v = np.asarray(v, dtype=float)
        if self.kind == "weibull":
            return -np.expm1(-(np.clip(v, 0, None) / self.scale) ** self.weibull_modulus)
        if self.kind == "lognormal":
            return ndtr((np.log(np.clip(v, 1e-300, None)) - self.log_mean) / self.log_sd)
        return ndtr((v - self.mean) / self.sd)


def covariance_matrix(spec: CovarianceSpec, coords: np.ndarray, coords_b: np.ndarray | None = None) -> np.ndarray:
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    other = coords if coords_b is None else np.atleast_2d(np.asarray(coords_b, dtype=float))
    return spec.correlation(cdist(coords, other))


def _rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.Philox(key=int(seed) & (2**64 - 1)))


def standard_normals(seed: int, n: int) -> np.ndarray:
    return _rng(seed).standard_normal(n)


class CholeskySampler:
    """Exact sampler; the lower factor is computed once and reused."""

    def __init__(self, spec: CovarianceSpec, coords: np.ndarray, nugget: float = 1e-10):
        self.spec = spec
        self.n = len(coords)
        cov = covariance_matrix(spec, coords)
        try:
            self.factor = scipy.linalg.cholesky(cov, lower=True, overwrite_a=True, check_finite=False)
        except np.linalg.LinAlgError:
            cov = covariance_matrix(spec, coords)
            cov[np.diag_indices_from(cov)] += nugget * spec.sigma2
            try:
                self.factor = scipy.linalg.cholesky(cov, lower=True, overwrite_a=True, check_finite=False)
            except np.linalg.LinAlgError as exc:
                raise FieldConfigurationError("covariance not factorisable even with nugget") from exc

    def sample(self, seed: int) -> np.ndarray:
        return self.factor @ standard_normals(seed, self.n)


class KLSampler:
    """Truncated spectral sampler built from a dense eigendecomposition."""

    def __init__(self, spec: CovarianceSpec, coords: np.ndarray, n_modes: int):
        n = len(coords)
        if not 1 <= n_modes <= n:
            raise ValueError(f"n_modes must lie in [1, {n}]")
        cov = covariance_matrix(spec, coords)
        try:
            vals, vecs = scipy.linalg.eigh(cov, subset_by_index=[n - n_modes, n - 1], check_finite=False)
        except np.linalg.LinAlgError as exc:
            raise FieldConfigurationError("eigen-solve did not converge") from exc
        order = np.argsort(vals)[::-1]
        self.eigenvalues = np.clip(vals[order], 0.0, None)
        self.modes = vecs[:, order]
        self.total_variance = float(np.trace(covariance_matrix(spec, coords[:1]))) * n
        self.n_modes = n_modes

    @property
    def energy_fraction(self) -> float:
        return float(self.eigenvalues.sum() / self.total_variance)

    def sample(self, seed: int) -> np.ndarray:
        xi = standard_normals(seed, self.n_modes)
        return self.modes @ (np.sqrt(self.eigenvalues) * xi)


def sample_gaussian_chol(spec: CovarianceSpec, coords: np.ndarray, seed: int) -> np.ndarray:
    return CholeskySampler(spec, coords).sample(seed)


def sample_gaussian_kl(spec: CovarianceSpec, coords: np.ndarray, n_modes: int, seed: int) -> np.ndarray:
    return KLSampler(spec, coords, n_modes).sample(seed)


def modes_for_energy(spec: CovarianceSpec, coords: np.ndarray, fraction: float) -> int:
    """Smallest mode count whose eigenvalues hold ``fraction`` of the trace."""
    vals = np.sort(scipy.linalg.eigvalsh(covariance_matrix(spec, coords)))[::-1]
    cum = np.cumsum(vals) / vals.sum()
    return int(np.searchsorted(cum, fraction) + 1)


def gaussian_to_marginal(z: np.ndarray, marginal: MarginalSpec) -> np.ndarray:
    """Componentwise ``F^-1(Phi(z))``, evaluated in a tail-safe form."""
    z = np.asarray(z, dtype=float)
    if marginal.kind == "gaussian":
        return marginal.mean + marginal.sd * z
    if marginal.kind == "lognormal":
        return np.exp(marginal.log_mean + marginal.log_sd * z)
    # -log(1 - Phi(z)) == -log(Phi(-z))
    return marginal.scale * (-log_ndtr(-z)) ** (1.0 / marginal.weibull_modulus)


def coarsen_field(values: np.ndarray, cmap: CoarsenMap) -> np.ndarray:
    values = np.asarray(values)
    if values.shape[0] != cmap.n_fine:
        raise ValueError(
            f"field has {values.shape[0]} values but level {cmap.fine_level} has {cmap.n_fine} nodes"
        )
    return values[cmap.index]


@dataclass
class FieldSample:
    """One realisation: the Gaussian vector and its values on each level."""

    seed: int
    sampled_level: int
    gaussian: np.ndarray
    level_values: dict

    def values(self, level: int) -> np.ndarray:
        return self.level_values[level]


def check_resolution(spec: CovarianceSpec, dx0: float) -> bool:
    if spec.lc <= dx0:
        warnings.warn(
            f"correlation length {spec.lc} does not exceed coarsest spacing {dx0}; "
            "neighbouring nodes are effectively uncorrelated",
            ResolutionWarning,
            stacklevel=2,
        )
        return False
    return True


# -- compressive strength -> (E, f_t, G_F) --------------------------------


@dataclass(frozen=True)
class FibPropertyMap:
    """Model-code style relations, ``fc`` in MPa.

    E = E0 (fc/10)^(1/3), f_t = 0.3 f_ck^(2/3), G_F = 73 fc^0.18 with
    f_ck = fc - 8.  Below ``2 * delta_f`` the offset is replaced by
    ``f_ck = fc / 2`` (continuous at 16 MPa) so f_t stays positive.
    """

    e0: float = 21.5e9
    delta_f: float = 8.0

    def characteristic(self, fc: np.ndarray) -> np.ndarray:
        return np.where(fc >= 2 * self.delta_f, fc - self.delta_f, 0.5 * fc)

    def __call__(self, fc: np.ndarray) -> dict:
        fc = np.asarray(fc, dtype=float)
        return {
            "E": self.e0 * np.cbrt(fc / 10.0),
            "ft": 0.3e6 * self.characteristic(fc) ** (2.0 / 3.0),
            "GF": 73.0 * fc**0.18,
        }


DEFAULT_PROPERTY_MAP = FibPropertyMap()


def property_map(fc_field: np.ndarray, model: Callable[[np.ndarray], dict] = DEFAULT_PROPERTY_MAP) -> dict:
    fc = np.asarray(fc_field, dtype=float)
    if not np.all(fc > 0):
        raise ValueError("compressive strength must be positive at every node")
    return model(fc)
