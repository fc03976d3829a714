"""Case-study configuration and the bundled presets.

A case is a nested mapping (YAML on disk).  Unknown keys are rejected so
typos fail loudly; everything resolved here is echoed into the manifest.
"""

from __future__ import annotations

import copy
import dataclasses
from dataclasses import dataclass, field
from pathlib import Path

import yaml

from ..fields import CovarianceSpec, MarginalSpec
from ..mlmc import MLMCConfig, PowerLawModel
from ..solver import SimulationConfig

CASE_KINDS = ("beam", "synthetic")


@dataclass(frozen=True)
class MaterialConfig:
    fcm: float = 42.3
    marginal: str = "weibull"
    weibull_modulus: float = 3.0
    lc: float = 0.02
    covariance: str = "exponential"
    rho_threshold: float = 0.5
    fc_floor: float = 1.0
    random: bool = True

    def marginal_spec(self) -> MarginalSpec:
        weibull = MarginalSpec.weibull_with_mean(self.fcm, self.weibull_modulus)
        if self.marginal == "weibull":
            return weibull
        if self.marginal == "gaussian":
            return MarginalSpec.gaussian_matching(weibull)
        if self.marginal == "lognormal":
            import math

            cv2 = (weibull.distribution_sd() / self.fcm) ** 2
            s2 = math.log1p(cv2)
            return MarginalSpec("lognormal", log_mean=math.log(self.fcm) - 0.5 * s2, log_sd=math.sqrt(s2))
        raise ValueError(f"unknown marginal {self.marginal!r}")

    def covariance_spec(self) -> CovarianceSpec:
        return CovarianceSpec(self.covariance, lc=self.lc, rho_threshold=self.rho_threshold)


@dataclass(frozen=True)
class MeshConfig:
    dx0: float = 0.01
    field_max_level: int = 2
    sampler: str = "cholesky"
    kl_energy: float = 0.99


@dataclass(frozen=True)
class CaseStudy:
    name: str
    kind: str = "beam"
    seed: int = 20240501
    material: MaterialConfig = field(default_factory=MaterialConfig)
    mesh: MeshConfig = field(default_factory=MeshConfig)
    solver: SimulationConfig = field(default_factory=SimulationConfig)
    mlmc: MLMCConfig = field(default_factory=lambda: MLMCConfig(eps_s=100.0, eps_b=100.0))
    synthetic: PowerLawModel = field(default_factory=PowerLawModel)
    cost_rate: float = 5.0e7

    def __post_init__(self):
        if self.kind not in CASE_KINDS:
            raise ValueError(f"unknown case kind {self.kind!r}")
        if self.kind == "beam":
            if not self.material.lc > self.mesh.dx0:
                raise ValueError(
                    f"correlation length {self.material.lc} must exceed the coarsest spacing {self.mesh.dx0}"
                )
            if self.mesh.sampler not in ("cholesky", "kl"):
                raise ValueError(f"unknown sampler {self.mesh.sampler!r}")
            if self.cost_rate <= 0:
                raise ValueError("cost_rate must be positive")

    def to_dict(self) -> dict:
        return dataclasses.asdict(self)

    def with_overrides(self, **mlmc) -> "CaseStudy":
        kept = {k: v for k, v in mlmc.items() if v is not None}
        if not kept:
            return self
        return dataclasses.replace(self, mlmc=dataclasses.replace(self.mlmc, **kept))


_SECTIONS = {
    "material": MaterialConfig,
    "mesh": MeshConfig,
    "solver": SimulationConfig,
    "mlmc": MLMCConfig,
    "synthetic": PowerLawModel,
}


def _merge(base: dict, update: dict) -> dict:
    out = copy.deepcopy(base)
    for key, val in update.items():
        if isinstance(val, dict) and isinstance(out.get(key), dict):
            out[key] = _merge(out[key], val)
        else:
            out[key] = val
    return out


def case_from_dict(data: dict) -> CaseStudy:
    data = dict(data)
    base_name = data.pop("preset", None)
    if base_name is not None:
        data = _merge(preset(base_name).to_dict(), data)
    kwargs = {}
    for key, val in data.items():
        if key in _SECTIONS:
            cls = _SECTIONS[key]
            names = {f.name for f in dataclasses.fields(cls)}
            unknown = set(val) - names
            if unknown:
                raise ValueError(f"unknown keys in [{key}]: {sorted(unknown)}")
            kwargs[key] = cls(**val)
        elif key in ("name", "kind", "seed", "cost_rate"):
            kwargs[key] = val
        else:
            raise ValueError(f"unknown top-level key {key!r}")
    kwargs.setdefault("name", base_name or "custom")
    return CaseStudy(**kwargs)


def load_case(path: str | Path) -> CaseStudy:
    with open(path) as fh:
        data = yaml.safe_load(fh) or {}
    if not isinstance(data, dict):
        raise ValueError("configuration file must hold a mapping")
    return case_from_dict(data)


def _specimen3(notched: bool) -> CaseStudy:
    return CaseStudy(
        name="specimen3-notched" if notched else "specimen3-unnotched",
        material=MaterialConfig(),
        solver=SimulationConfig(notch_ratio=0.5 if notched else 0.0),
        mlmc=MLMCConfig(eps_s=100.0, eps_b=100.0, warmup=100, max_level=4),
    )


def _synthetic() -> CaseStudy:
    return CaseStudy(
        name="synthetic",
        kind="synthetic",
        seed=7,
        mlmc=MLMCConfig(eps_s=0.01, eps_b=0.01, warmup=50, max_level=8),
        synthetic=PowerLawModel(mu=10.0, b=1.0, alpha=1.0, v=1.0, beta=2.0, v0=1.0, gamma=1.0),
    )


PRESETS = {
    "specimen3-notched": lambda: _specimen3(True),
    "specimen3-unnotched": lambda: _specimen3(False),
    "synthetic": _synthetic,
}


def preset(name: str) -> CaseStudy:
    try:
        return PRESETS[name]()
    except KeyError:
        raise ValueError(f"unknown preset {name!r}; choose from {sorted(PRESETS)}") from None
