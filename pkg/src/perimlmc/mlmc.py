"""Standard and multilevel Monte Carlo estimators.

Per-level statistics are accumulated with :func:`math.fsum`, which rounds
exactly, so estimates do not depend on the order in which samples arrive.
"""

from __future__ import annotations

import logging
import math
import warnings
from dataclasses import asdict, dataclass, field
from typing import Callable, Iterable, Protocol, Sequence

import numpy as np

from .seeding import seeds_for, uniforms

log = logging.getLogger(__name__)


class NotAsymptoticError(ValueError):
    """``r * m_ref**alpha <= 1``: the bias bound is not defined."""


class RateFitWarning(UserWarning):
    pass


@dataclass(frozen=True)
class LevelSample:
    level: int
    index: int
    seed: int
    y: float
    q_fine: float
    q_coarse: float | None
    cost: float
    cost_fine: float | None = None


@dataclass
class LevelStats:
    level: int
    n_samples: int
    mean_y: float
    mean_q: float
    variance: float
    cost: float
    variance_q: float = math.nan
    cost_fine: float = math.nan

    @classmethod
    def from_samples(cls, level: int, samples: Sequence[LevelSample]) -> "LevelStats":
        if not samples:
            raise ValueError(f"no samples on level {level}")
        ys = [s.y for s in samples]
        n = len(ys)
        qs = [s.q_fine for s in samples]
        fine = [s.cost if s.cost_fine is None else s.cost_fine for s in samples]
        return cls(
            level=level,
            n_samples=n,
            mean_y=math.fsum(ys) / n,
            mean_q=math.fsum(qs) / n,
            variance=sample_variance(ys) if n >= 2 else math.nan,
            cost=math.fsum(s.cost for s in samples) / n,
            variance_q=sample_variance(qs) if n >= 2 else math.nan,
            cost_fine=math.fsum(fine) / n,
        )


@dataclass
class RateEstimates:
    alpha: float
    beta: float
    gamma: float
    r2: dict = field(default_factory=dict)
    levels_used: dict = field(default_factory=dict)


@dataclass(frozen=True)
class MLMCConfig:
    eps_s: float
    eps_b: float
    warmup: int = 100
    m_ref: float = 4.0
    r: float = 1.0
    max_level: int = 4
    alpha_prior: float = 0.5
    min_variance_samples: int = 10
    min_level: int = 1

    def __post_init__(self):
        if self.eps_s <= 0 or self.eps_b <= 0:
            raise ValueError("tolerances must be positive")
        if self.m_ref < 2:
            raise ValueError("m_ref must be at least 2")
        if not 0 < self.r <= 1:
            raise ValueError("r must lie in (0, 1]")
        if self.warmup < 2:
            raise ValueError("need at least two warm-up samples")
        if self.max_level < 0:
            raise ValueError("max_level must be >= 0")
        if not 0 <= self.min_level <= max(self.max_level, 1):
            raise ValueError("min_level must lie in [0, max_level]")


@dataclass
class MLMCResult:
    estimate: float
    levels: list[LevelStats]
    rates: RateEstimates | None
    bias: float
    sampling_error: float
    total_cost: float
    converged: bool
    message: str
    allocation: list[int]
    config: MLMCConfig
    samples: list[LevelSample] = field(repr=False, default_factory=list)
    history: list[dict] = field(repr=False, default_factory=list)

    @property
    def L(self) -> int:
        return len(self.levels) - 1

    @property
    def rmse(self) -> float:
        return math.sqrt(self.bias**2 + self.sampling_error**2)

    def to_dict(self) -> dict:
        return {
            "estimate": self.estimate,
            "L": self.L,
            "bias": self.bias,
            "sampling_error": self.sampling_error,
            "rmse": self.rmse,
            "total_cost": self.total_cost,
            "converged": self.converged,
            "message": self.message,
            "allocation": list(self.allocation),
            "levels": [asdict(s) for s in self.levels],
            "rates": None if self.rates is None else asdict(self.rates),
            "config": asdict(self.config),
            "history": self.history,
        }


# -- estimators ---------------------------------------------------------------


def mc_estimate(samples: Iterable[float]) -> float:
    values = list(samples)
    if not values:
        raise ValueError("no samples")
    return math.fsum(values) / len(values)


def _ceil(x: float) -> int:
    # guard against 8.000000000000002 -> 9
    return max(1, math.ceil(x * (1.0 - 1e-12)))


def mc_num_samples(V: float, eps_s: float) -> int:
    if V < 0 or eps_s <= 0:
        raise ValueError("need V >= 0 and eps_s > 0")
    return _ceil(V / eps_s**2)


def ml_estimate(levels: Sequence[LevelStats]) -> float:
    ids = [s.level for s in levels]
    if ids != list(range(len(ids))) or not ids:
        raise ValueError(f"levels must be contiguous from 0, got {ids}")
    return math.fsum(s.mean_y for s in levels)


def sample_variance(values: Iterable[float]) -> float:
    """Biased (1/N) sample variance, floored at zero."""
    v = list(values)
    n = len(v)
    if n < 2:
        raise ValueError("need at least two values")
    mean = math.fsum(v) / n
    return max(0.0, math.fsum(x * x for x in v) / n - mean * mean)


def continuous_allocation(V: Sequence[float], C: Sequence[float], eps_s: float) -> list[int]:
    """Ceiling of the Lagrange solution, at least one sample per level."""
    V = [float(x) for x in V]
    C = [float(x) for x in C]
    if eps_s <= 0 or any(x < 0 for x in V) or any(c <= 0 for c in C) or len(V) != len(C):
        raise ValueError("need V >= 0, C > 0, eps_s > 0 and matching lengths")
    total = math.fsum(math.sqrt(v * c) for v, c in zip(V, C))
    return [_ceil(total * math.sqrt(v / c) / eps_s**2) for v, c in zip(V, C)]


_FEAS_TOL = 1e-10


def _dual_bound(V, C, r):
    """Lower bound on min sum N C over integers N >= 1 with sum V / N <= r.

    Weak duality: for any multiplier mu, sum_j min_N (N C_j + mu V_j / N) - mu r
    bounds the integer optimum from below.  ``mu`` comes from the continuous
    solution with the N >= 1 floors clamped.
    """
    if not V:
        return 0.0
    if r <= 0:
        return math.inf if any(v > 0 for v in V) else math.fsum(C)
    free = [j for j in range(len(V)) if V[j] > 0]
    for _ in range(len(V)):
        used = math.fsum(V[j] for j in range(len(V)) if j not in free)
        rr = r - used
        if rr <= 0 or not free:
            break
        mu = (math.fsum(math.sqrt(V[j] * C[j]) for j in free) / rr) ** 2
        keep = [j for j in free if mu * V[j] > C[j]]
        if keep == free:
            break
        free = keep
    else:
        mu = (math.fsum(math.sqrt(v * c) for v, c in zip(V, C)) / r) ** 2
    if not free:
        mu = 0.0
    total = -mu * r
    for v, c in zip(V, C):
        if v == 0:
            total += c
            continue
        x = max(1, math.floor(math.sqrt(mu * v / c)))
        total += min(x * c + mu * v / x, (x + 1) * c + mu * v / (x + 1))
    return total


def _integer_optimum(V, C, budget, start, node_limit):
    """Branch and bound for min sum N C subject to sum V / N <= budget.

    Levels are visited in increasing order of their continuous sample count;
    the level with the most samples is solved in closed form once the others
    are fixed.  Candidate counts per level come from the continuous bound
    (a quadratic in N) and are pruned with :func:`_dual_bound`.
    """
    n = len(V)
    order = sorted(range(n), key=lambda j: (start[j], j))
    Vs = [V[j] for j in order]
    Cs = [C[j] for j in order]
    root = [math.sqrt(v * c) for v, c in zip(Vs, Cs)]
    S = [math.fsum(root[k:]) for k in range(n)] + [0.0]
    Cmin = [math.fsum(Cs[k:]) for k in range(n)] + [0.0]
    best = [math.fsum(a * c for a, c in zip(start, C)), [start[j] for j in order]]
    nodes = [0]

    def visit(k, r, cost, chosen):
        nodes[0] += 1
        if nodes[0] > node_limit:
            return
        if k == n - 1:
            if Vs[k] == 0:
                m = 1
            elif r <= 0:
                return
            else:
                m = _ceil(Vs[k] / r)
            if cost + m * Cs[k] < best[0] * (1 - 1e-15):
                best[0], best[1] = cost + m * Cs[k], chosen + [m]
            return
        if Vs[k] == 0:
            visit(k + 1, r, cost + Cs[k], chosen + [1])
            return
        B = best[0] - cost
        s2 = S[k + 1] ** 2
        # N C + s2 / (r - V / N) < B  <=>  -C r N^2 + (B r + C V - s2) N - B V > 0
        qa, qb, qc = -Cs[k] * r, B * r + Cs[k] * Vs[k] - s2, -B * Vs[k]
        disc = qb * qb - 4 * qa * qc
        if disc < 0:
            return
        sq = math.sqrt(disc)
        lo, hi = sorted(((-qb + sq) / (2 * qa), (-qb - sq) / (2 * qa)))
        lo = max(1, math.floor(lo), math.floor(Vs[k] / r))
        hi = min(math.ceil(hi), math.floor((B - Cmin[k + 1]) / Cs[k]))
        rest_v, rest_c = Vs[k + 1:], Cs[k + 1:]
        for m in range(lo, hi + 1):
            rest = r - Vs[k] / m
            if rest <= 0 and S[k + 1] > 0:
                continue
            c_now = cost + m * Cs[k]
            if c_now + max(Cmin[k + 1], s2 / rest if rest > 0 else 0.0) >= best[0]:
                continue
            if c_now + _dual_bound(rest_v, rest_c, rest) >= best[0] * (1 - 1e-15):
                continue
            visit(k + 1, rest, c_now, chosen + [m])

    visit(0, budget * (1 + _FEAS_TOL), 0.0, [])
    out = [0] * n
    for pos, j in enumerate(order):
        out[j] = best[1][pos]
    return out, nodes[0] <= node_limit


def allocate_samples(V: Sequence[float], C: Sequence[float], eps_s: float, node_limit: int = 200_000) -> list[int]:
    """Cheapest integer sample counts with sum V_l / N_l <= eps_s^2, at least one per level.

    The ceiling of the Lagrange solution is feasible and within one sample
    per level of the real-valued optimum, but the integer optimum can sit
    several samples away along the flat valley of the cost.  It seeds a
    branch and bound that returns the exact integer optimum; if the search
    exceeds ``node_limit`` nodes the best allocation found so far is kept.
    """
    start = continuous_allocation(V, C, eps_s)
    if len(start) == 1:
        return start
    V = [float(x) for x in V]
    C = [float(x) for x in C]
    out, _ = _integer_optimum(V, C, eps_s**2, start, node_limit)
    return out


def bias_estimate(mean_y_L: float, alpha: float, m_ref: float = 4.0, r: float = 1.0) -> float:
    denom = r * m_ref**alpha - 1.0
    if not denom > 0:
        raise NotAsymptoticError(f"r * m_ref**alpha = {denom + 1:.4g} <= 1; not in the asymptotic regime")
    return abs(mean_y_L) / denom


def _fit(x: np.ndarray, y: np.ndarray) -> tuple[float, float]:
    slope, intercept = np.polyfit(x, y, 1)
    resid = y - (slope * x + intercept)
    ss = np.sum((y - y.mean()) ** 2)
    r2 = 1.0 - np.sum(resid**2) / ss if ss > 0 else 1.0
    return float(slope), float(r2)


def estimate_rates(levels: Sequence[LevelStats], m_ref: float = 4.0, sizes: Sequence[float] | None = None) -> RateEstimates:
    """Log-log least-squares slopes; Y-based rates skip level 0."""
    if len(levels) < 3:
        raise ValueError("need at least three levels to fit rates")
    sizes = np.asarray(sizes if sizes is not None else [m_ref**s.level for s in levels], dtype=float)
    logm = np.log(sizes)
    out, r2, used = {}, {}, {}
    for name, values, start in (
        ("alpha", [abs(s.mean_y) for s in levels], 1),
        ("beta", [s.variance for s in levels], 1),
        ("gamma", [s.cost for s in levels], 0),
    ):
        idx = [k for k in range(start, len(levels)) if np.isfinite(values[k]) and values[k] > 0]
        dropped = [levels[k].level for k in range(start, len(levels)) if k not in idx]
        if dropped:
            warnings.warn(f"{name}: levels {dropped} have nonpositive values and were excluded", RateFitWarning,
                          stacklevel=2)
        if len(idx) < 2:
            out[name], r2[name] = math.nan, math.nan
        else:
            slope, r2[name] = _fit(logm[idx], np.log([values[k] for k in idx]))
            out[name] = slope if name == "gamma" else -slope
        used[name] = [levels[k].level for k in idx]
    return RateEstimates(out["alpha"], out["beta"], out["gamma"], r2, used)


def mlmc_cost(V: Sequence[float], C: Sequence[float], eps_s: float) -> float:
    """Cost of the optimal integer allocation, sum N_l C_l."""
    return math.fsum(n * c for n, c in zip(allocate_samples(V, C, eps_s), C))


def mc_cost(variance_q: float, cost_fine: float, eps_s: float) -> float:
    """Cost of plain Monte Carlo on one level at the same sampling tolerance."""
    return mc_num_samples(variance_q, eps_s) * cost_fine


def cost_comparison(levels: Sequence[LevelStats], eps_s: float, min_n: int = 10) -> dict:
    """Allocation-based MLMC cost against plain MC on the finest level."""
    V = _effective_variances(list(levels), min_n)
    C = [s.cost for s in levels]
    top = levels[-1]
    out = {
        "eps_s": eps_s,
        "allocation": allocate_samples(V, C, eps_s),
        "mc_samples": mc_num_samples(top.variance_q, eps_s),
        "mlmc_cost": mlmc_cost(V, C, eps_s),
        "mc_cost": mc_cost(top.variance_q, top.cost_fine, eps_s),
    }
    out["speedup"] = out["mc_cost"] / out["mlmc_cost"]
    return out


def predict_cost_growth(rates: RateEstimates) -> dict:
    """Exponents ``p`` in cost ~ eps**-p for MLMC and plain MC."""
    if not rates.alpha > 0:
        raise ValueError("alpha must be positive")
    return {
        "mlmc": 2.0 + max(0.0, (rates.gamma - rates.beta) / rates.alpha),
        "mc": 2.0 + rates.gamma / rates.alpha,
    }


# -- adaptive driver ----------------------------------------------------------


class LevelModel(Protocol):
    def __call__(self, level: int, indices: Sequence[int]) -> list[LevelSample]: ...


def _effective_variances(stats: list[LevelStats], min_n: int) -> list[float]:
    V = [s.variance for s in stats]
    for k in range(1, len(V)):
        if stats[k].n_samples < min_n:
            V[k] = max(V[k], V[k - 1])
    return V


def _current_alpha(stats: list[LevelStats], cfg: MLMCConfig) -> tuple[float, str]:
    if len(stats) >= 3:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RateFitWarning)
            a = estimate_rates(stats, cfg.m_ref).alpha
        if np.isfinite(a):
            return a, "fitted"
    return cfg.alpha_prior, "prior"


def adaptive_mlmc(model: LevelModel, cfg: MLMCConfig, start_level: int = 0) -> MLMCResult:
    """Level-adding MLMC loop with warm-up, re-allocation and a bias test.

    ``model(level, indices)`` must return one :class:`LevelSample` per index
    and be deterministic in ``(level, index)``.
    """
    samples: dict[int, list[LevelSample]] = {}
    history = []
    L = start_level
    for lev in range(start_level):
        samples[lev] = list(model(lev, range(cfg.warmup)))
    converged = False
    message = ""
    bias = math.inf
    while True:
        samples[L] = list(model(L, range(cfg.warmup)))
        stats = [LevelStats.from_samples(k, samples[k]) for k in range(L + 1)]
        V = _effective_variances(stats, cfg.min_variance_samples)
        N_hat = allocate_samples(V, [s.cost for s in stats], cfg.eps_s)
        for k in range(L + 1):
            n_now = len(samples[k])
            if N_hat[k] > n_now:
                samples[k].extend(model(k, range(n_now, N_hat[k])))
        stats = [LevelStats.from_samples(k, samples[k]) for k in range(L + 1)]
        alpha, source = _current_alpha(stats, cfg)
        try:
            bias = bias_estimate(stats[L].mean_y, alpha, cfg.m_ref, cfg.r)
        except NotAsymptoticError:
            bias = math.inf
        history.append({"L": L, "allocation": N_hat, "alpha": alpha, "alpha_source": source, "bias": bias})
        log.info("L=%d N=%s alpha=%.3f (%s) bias=%.4g", L, N_hat, alpha, source, bias)
        if L > 0 and L >= cfg.min_level and bias < cfg.eps_b:
            converged = True
            message = "converged"
            break
        if L >= cfg.max_level:
            message = "bias tolerance unmet"
            break
        L += 1
    stats = [LevelStats.from_samples(k, samples[k]) for k in range(L + 1)]
    V = _effective_variances(stats, cfg.min_variance_samples)
    rates = None
    if len(stats) >= 3:
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", RateFitWarning)
            rates = estimate_rates(stats, cfg.m_ref)
    flat = [s for k in range(L + 1) for s in sorted(samples[k], key=lambda s: s.index)]
    return MLMCResult(
        estimate=ml_estimate(stats),
        levels=stats,
        rates=rates,
        bias=bias,
        sampling_error=math.sqrt(math.fsum(v / s.n_samples for v, s in zip(V, stats))),
        total_cost=math.fsum(s.cost for s in flat),
        converged=converged,
        message=message,
        allocation=N_hat,
        config=cfg,
        samples=flat,
        history=history,
    )


# -- synthetic power-law model -----------------------------------------------


@dataclass(frozen=True)
class PowerLawModel:
    """Q_l = mu - b M_l^-alpha + sum_{k<=l} sigma_k Z_k with M_l = m^l.

    So E[Y_l] ~ M_l^-alpha, V[Y_l] = v M_l^-beta (l >= 1), V[Y_0] = v0 and
    the cost of Y_l is c0 (M_l^gamma + M_{l-1}^gamma).
    """

    mu: float = 10.0
    b: float = 1.0
    alpha: float = 1.0
    v: float = 1.0
    beta: float = 2.0
    v0: float = 1.0
    gamma: float = 1.0
    m_ref: float = 4.0
    c0: float = 1.0
    base_seed: int = 0

    def size(self, level: int) -> float:
        return self.m_ref**level

    def expected_q(self, level: int | None = None) -> float:
        if level is None:
            return self.mu
        return self.mu - self.b * self.size(level) ** -self.alpha

    def sigma(self, k: int) -> float:
        return math.sqrt(self.v0 if k == 0 else self.v * self.size(k) ** -self.beta)

    def cost(self, level: int) -> float:
        c = self.size(level) ** self.gamma
        if level > 0:
            c += self.size(level - 1) ** self.gamma
        return self.c0 * c

    def __call__(self, level: int, indices: Sequence[int]) -> list[LevelSample]:
        from scipy.special import ndtri

        idx = np.asarray(list(indices), dtype=np.int64)
        if idx.size == 0:
            return []
        seeds = seeds_for(self.base_seed, level, idx)
        z = np.array([ndtri(uniforms(seeds, k)) for k in range(level + 1)])
        sig = np.array([self.sigma(k) for k in range(level + 1)])[:, None]
        noise = np.cumsum(sig * z, axis=0)
        q_fine = self.expected_q(level) + noise[level]
        q_coarse = self.expected_q(level - 1) + noise[level - 1] if level > 0 else None
        y = q_fine - q_coarse if level > 0 else q_fine
        cost = self.cost(level)
        cost_fine = self.c0 * self.size(level) ** self.gamma
        return [
            LevelSample(level, int(i), int(s), float(y[n]), float(q_fine[n]),
                        None if q_coarse is None else float(q_coarse[n]), cost, cost_fine)
            for n, (i, s) in enumerate(zip(idx, seeds))
        ]


def as_level_model(fn: Callable[[int, int], tuple]) -> LevelModel:
    """Wrap ``fn(level, index) -> (y, q, cost)`` as a batch model."""

    def model(level: int, indices: Sequence[int]) -> list[LevelSample]:
        out = []
        for i in indices:
            y, q, cost = fn(level, i)
            out.append(LevelSample(level, int(i), int(i), float(y), float(q), None, float(cost)))
        return out

    return model
