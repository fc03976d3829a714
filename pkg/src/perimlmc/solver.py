"""Quasi-static three-point bending by damped explicit dynamics.

The beam sits on two full-depth node columns whose vertical displacement is
pinned at the support abscissae (interpolated between the two straddling
columns when the support falls on a cell edge).  A rigid punch made of the
top-row nodes within ``load_width / 2`` of midspan is driven down at a
prescribed velocity; the load is the sum of internal forces on the punch.
"""

from __future__ import annotations

import logging
import time
import warnings
from dataclasses import dataclass, field

import numpy as np
import scipy.sparse as sp
import scipy.sparse.linalg as spla

from . import _kernels
from .material import ProblemKind, bond_stiffness, critical_stretch_array
from .mesh import Bonds, MeshLevel

log = logging.getLogger(__name__)


class SampleError(RuntimeError):
    """A simulation diverged or never reached its post-peak stop."""

    def __init__(self, message: str, diagnostics: dict | None = None):
        super().__init__(message)
        self.diagnostics = diagnostics or {}


class NoPostPeakWarning(UserWarning):
    pass


@dataclass(frozen=True)
class SimulationConfig:
    length: float = 0.35
    depth: float = 0.10
    thickness: float = 0.05
    span: float = 0.25
    notch_ratio: float = 0.5
    density: float = 2346.0
    loading_rate: float = 0.005
    ramp_time: float = 2.0e-4
    max_steps: int = 400_000
    damping: float = 500.0
    safety: float = 0.95
    drop_ratio: float = 0.75
    load_width: float = 0.02
    problem: str = "plane_stress"
    k: float = 25.0
    alpha_soft: float = 0.25
    record_every: int = 20
    elastic_start: bool = True
    onset_fraction: float = 0.9

    def __post_init__(self):
        if self.span > self.length:
            raise ValueError("span exceeds beam length")
        if not 0.0 <= self.notch_ratio < 1.0:
            raise ValueError("notch ratio must lie in [0, 1)")
        if self.density <= 0:
            raise ValueError("density must be positive")
        if not 0.0 < self.safety <= 1.0:
            raise ValueError("safety factor must lie in (0, 1]")
        if not 0.0 < self.onset_fraction <= 1.0:
            raise ValueError("onset fraction must lie in (0, 1]")
        if self.loading_rate <= 0 or self.max_steps < 1:
            raise ValueError("loading rate and max steps must be positive")
        if not 0.0 < self.drop_ratio < 1.0:
            raise ValueError("drop ratio must lie in (0, 1)")

    @property
    def problem_kind(self) -> ProblemKind:
        return ProblemKind(self.problem, None if self.problem == "three_d" else self.thickness)

    @property
    def midspan(self) -> float:
        return 0.5 * self.length


@dataclass
class QoISample:
    q: float
    level: int
    seed: int | None
    cost: float
    work: float
    steps: int
    stop: str
    history: np.ndarray = field(repr=False)
    damage: np.ndarray = field(repr=False)


@dataclass
class BeamGeometry:
    level: MeshLevel
    bonds: Bonds
    punch: np.ndarray
    sup_a: np.ndarray
    sup_b: np.ndarray
    sup_wa: np.ndarray
    sup_wb: np.ndarray
    probe: np.ndarray


@dataclass
class BondProperties:
    c: np.ndarray
    s0: np.ndarray
    sc: np.ndarray


def apply_notch(level: MeshLevel, ratio: float, bonds: Bonds | None = None, x_notch: float | None = None,
                depth: float | None = None) -> Bonds:
    """Drop every bond whose segment meets the notch.

    The notch is the closed vertical segment ``x = x_notch`` from the bottom
    face up to ``ratio * depth``.  A bond touching it counts as crossing, so
    nodes lying exactly on the notch line below the tip lose all their bonds
    (on an odd grid the notch becomes a one-cell slot) and the cut stays
    mirror-symmetric.
    """
    bonds = level.bonds if bonds is None else bonds
    if not 0.0 <= ratio < 1.0:
        raise ValueError("notch ratio must lie in [0, 1)")
    if ratio == 0.0:
        return bonds
    X = level.node_coords
    if depth is None:
        depth = level.ny * level.dx
    if x_notch is None:
        x_notch = level.origin[0] + 0.5 * level.nx * level.dx
    tol = 1e-9 * level.dx
    tip = level.origin[1] + ratio * depth + tol
    da = X[bonds.i, 0] - x_notch
    db = X[bonds.j, 0] - x_notch
    da[np.abs(da) < tol] = 0.0
    db[np.abs(db) < tol] = 0.0
    ya, yb = X[bonds.i, 1], X[bonds.j, 1]
    along = (da == 0.0) & (db == 0.0)
    straddle = (da * db <= 0.0) & ~along
    with np.errstate(divide="ignore", invalid="ignore"):
        y_cut = ya + (yb - ya) * da / (da - db)
    cut = (straddle & (y_cut <= tip)) | (along & (np.minimum(ya, yb) <= tip))
    return bonds.subset(~cut)


def _support_columns(level: MeshLevel, x_s: float):
    """Column indices and interpolation weights for a support at ``x_s``."""
    xs = level.origin[0] + (np.arange(level.nx) + 0.5) * level.dx
    f = (x_s - xs[0]) / level.dx
    ia = int(np.floor(f + 1e-9))
    frac = f - ia
    rows = np.arange(level.ny) * level.nx
    if abs(frac) < 1e-9:
        return rows + ia, np.full(level.ny, -1), np.ones(level.ny), np.zeros(level.ny)
    return rows + ia, rows + ia + 1, np.full(level.ny, 1.0 - frac), np.full(level.ny, frac)


def prepare_beam(level: MeshLevel, cfg: SimulationConfig) -> BeamGeometry:
    if abs(level.nx * level.dx - cfg.length) > 1e-9 or abs(level.ny * level.dx - cfg.depth) > 1e-9:
        raise ValueError("mesh does not match the beam dimensions")
    bonds = apply_notch(level, cfg.notch_ratio, x_notch=level.origin[0] + cfg.midspan, depth=cfg.depth)
    X = level.node_coords
    top = X[:, 1] > level.origin[1] + cfg.depth - level.dx
    near = np.abs(X[:, 0] - (level.origin[0] + cfg.midspan)) <= 0.5 * cfg.load_width + 1e-9 * level.dx
    punch = np.flatnonzero(top & near)
    if len(punch) == 0:
        raise ValueError("load patch contains no nodes")
    parts = [_support_columns(level, level.origin[0] + cfg.midspan + sgn * 0.5 * cfg.span) for sgn in (-1, 1)]
    sup_a, sup_b, sup_wa, sup_wb = (np.concatenate([p[n] for p in parts]) for n in range(4))
    # midspan probe at mid-depth: the nodes nearest to the beam centre point
    centre = np.array([level.origin[0] + cfg.midspan, level.origin[1] + 0.5 * cfg.depth])
    dist = np.linalg.norm(X - centre, axis=1)
    probe = np.flatnonzero(dist <= dist.min() + 1e-9 * level.dx)
    return BeamGeometry(level, bonds, punch.astype(np.int64), sup_a.astype(np.int64), sup_b.astype(np.int64),
                        sup_wa.astype(float), sup_wb.astype(float), probe.astype(np.int64))


def bond_properties(geom: BeamGeometry, fields: dict, cfg: SimulationConfig) -> BondProperties:
    """Per-bond law parameters from the mean of the two nodal fields."""
    b = geom.bonds
    E = 0.5 * (np.asarray(fields["E"])[b.i] + np.asarray(fields["E"])[b.j])
    ft = 0.5 * (np.asarray(fields["ft"])[b.i] + np.asarray(fields["ft"])[b.j])
    GF = 0.5 * (np.asarray(fields["GF"])[b.i] + np.asarray(fields["GF"])[b.j])
    delta = geom.level.horizon
    kind = cfg.problem_kind
    s0 = ft / E
    sc = critical_stretch_array(GF, E, delta, s0, cfg.k, cfg.alpha_soft, kind)
    return BondProperties(bond_stiffness(E, delta, kind), s0, sc)


def uniform_fields(level: MeshLevel, E: float, ft: float, GF: float) -> dict:
    n = level.node_count
    return {"E": np.full(n, E), "ft": np.full(n, ft), "GF": np.full(n, GF)}


def stable_timestep(level: MeshLevel, density: float, c, safety: float = 0.8, bonds: Bonds | None = None) -> float:
    """Largest node-wise stable step of the central-difference scheme."""
    if density <= 0:
        raise ValueError("density must be positive")
    if not 0.0 < safety <= 1.0:
        raise ValueError("safety factor must lie in (0, 1]")
    bonds = level.bonds if bonds is None else bonds
    c = np.broadcast_to(np.asarray(c, dtype=float), bonds.xi.shape)
    w = c * bonds.volume_factor * level.node_volume / bonds.xi
    total = np.bincount(bonds.i, w, level.node_count) + np.bincount(bonds.j, w, level.node_count)
    return safety * float(np.sqrt(2.0 * density / total.max()))


def assemble_forces(u, level: MeshLevel, bonds: Bonds, props: BondProperties, cfg: SimulationConfig | None = None,
                    smax: np.ndarray | None = None) -> np.ndarray:
    """Nodal force density for displacement ``u`` (no history update)."""
    k = 25.0 if cfg is None else cfg.k
    alpha = 0.25 if cfg is None else cfg.alpha_soft
    smax = np.zeros(len(bonds)) if smax is None else smax
    F = np.zeros((level.node_count, 2))
    stiff = props.c * bonds.volume_factor * level.node_volume
    _kernels.bond_forces(level.node_coords, np.ascontiguousarray(u, dtype=float), bonds.i, bonds.j, bonds.xi,
                         stiff, props.s0, props.sc, k, alpha, smax.copy(), F, False)
    return F


def elastic_energy(u, level: MeshLevel, bonds: Bonds, props: BondProperties) -> float:
    """Stored energy of the linear-elastic bond network (exact stretch)."""
    X = level.node_coords
    e = X[bonds.j] + u[bonds.j] - X[bonds.i] - u[bonds.i]
    s = (np.linalg.norm(e, axis=1) - bonds.xi) / bonds.xi
    V = level.node_volume
    return float(np.sum(0.5 * props.c * bonds.volume_factor * V * V * s * s * bonds.xi))


def nodal_damage(level: MeshLevel, bonds: Bonds, props: BondProperties, smax: np.ndarray, cfg: SimulationConfig):
    from .material import _damage

    d = _damage(np.maximum(smax, 1e-300), props.s0, props.sc, cfg.k, cfg.alpha_soft)
    w = bonds.volume_factor
    num = np.bincount(bonds.i, w * d, level.node_count) + np.bincount(bonds.j, w * d, level.node_count)
    den = np.bincount(bonds.i, w, level.node_count) + np.bincount(bonds.j, w, level.node_count)
    return np.divide(num, den, out=np.zeros_like(num), where=den > 0)


def extract_peak_load(history) -> float:
    h = np.asarray(history, dtype=float)
    if h.size == 0:
        raise ValueError("empty load history")
    i = int(np.argmax(h))
    if i == h.size - 1 and h.size > 1:
        warnings.warn("load history has no post-peak branch", NoPostPeakWarning, stacklevel=2)
    return float(h[i])


_STOP_NAMES = {_kernels.STOP_MAX_STEPS: "max_steps", _kernels.STOP_DROP: "post_peak_drop",
               _kernels.STOP_DIVERGED: "diverged"}


def run_sample(level: MeshLevel, fields: dict, cfg: SimulationConfig, seed: int | None = None,
               geometry: BeamGeometry | None = None, max_displacement: float | None = None,
               strict: bool = True) -> QoISample:
    """Drive one beam to failure and return the peak punch load.

    With ``cfg.elastic_start`` the run begins from the linear static state at
    ``onset_fraction`` of the damage-onset displacement, moving with the
    matching quasi-static velocity field; otherwise from rest with a linear
    velocity ramp.  ``max_displacement`` caps the run (elastic probes); with
    ``strict`` a run that ends without the post-peak drop raises
    :class:`SampleError`.
    """
    t0 = time.perf_counter()
    geom = prepare_beam(level, cfg) if geometry is None else geometry
    props = bond_properties(geom, fields, cfg)
    rho = cfg.density
    bonds = geom.bonds
    dt = stable_timestep(level, rho, props.c, cfg.safety, bonds)
    n = level.node_count
    u = np.zeros((n, 2))
    v = np.zeros((n, 2))
    u_start, t_ramp = 0.0, cfg.ramp_time
    if cfg.elastic_start:
        phi = linear_response(geom, props).displacement
        u_start = cfg.onset_fraction * damage_onset_displacement(geom, props, phi)
        if max_displacement is not None:
            u_start = min(u_start, 0.5 * max_displacement)
        u[:] = u_start * phi
        v[:] = cfg.loading_rate * phi
        t_ramp = 0.0
    max_steps = cfg.max_steps
    if max_displacement is not None:
        t_end = (max_displacement - u_start) / cfg.loading_rate + 0.5 * t_ramp
        max_steps = max(1, min(max_steps, int(np.ceil(t_end / dt))))
    smax = np.zeros(len(bonds))
    stiff = props.c * bonds.volume_factor * level.node_volume
    n_rec = max_steps // cfg.record_every + 2
    rec = [np.zeros(n_rec) for _ in range(6)]
    min_drop_step = int(np.ceil(t_ramp / dt)) + 1
    steps, n_rec, peak, stop = _kernels.integrate(
        level.node_coords, u, v, bonds.i, bonds.j, bonds.xi, stiff, props.s0, props.sc, cfg.k, cfg.alpha_soft,
        smax, rho, cfg.damping, dt, geom.punch, geom.sup_a, geom.sup_b, geom.sup_wa, geom.sup_wb,
        u_start, cfg.loading_rate, t_ramp, max_steps, cfg.drop_ratio, min_drop_step, level.node_volume,
        geom.probe, cfg.record_every, *rec,
    )
    history = np.column_stack([r[:n_rec] for r in rec])
    stop_name = _STOP_NAMES[stop]
    wall = time.perf_counter() - t0
    diagnostics = {"level": level.level, "seed": seed, "steps": steps, "dt": dt, "peak": peak,
                   "stop": stop_name, "max_abs_u": float(np.abs(u).max())}
    if stop == _kernels.STOP_DIVERGED or not np.isfinite(peak):
        raise SampleError("simulation diverged", diagnostics)
    if strict and max_displacement is None and stop != _kernels.STOP_DROP:
        raise SampleError("no post-peak drop before max_steps", diagnostics)
    log.debug("level %d seed %s: peak %.1f N after %d steps (%.2fs)", level.level, seed, peak, steps, wall)
    return QoISample(
        q=max(float(peak), 0.0),
        level=level.level,
        seed=seed,
        cost=wall,
        work=float(steps) * len(bonds),
        steps=steps,
        stop=stop_name,
        history=history,
        damage=nodal_damage(level, bonds, props, smax, cfg),
    )


HISTORY_COLUMNS = ("time_s", "punch_displacement_m", "reaction_N", "kinetic_energy_J", "external_work_J",
                   "midspan_deflection_m")


# -- linear static reference -------------------------------------------------


def stiffness_matrix(level: MeshLevel, bonds: Bonds, c) -> sp.csr_matrix:
    """Linearised bond stiffness (N/m) of the undamaged network."""
    X = level.node_coords
    e = (X[bonds.j] - X[bonds.i]) / bonds.xi[:, None]
    V = level.node_volume
    kb = np.broadcast_to(np.asarray(c, dtype=float), bonds.xi.shape) * bonds.volume_factor * V * V / bonds.xi
    blocks = (kb[:, None, None] * e[:, :, None] * e[:, None, :]).reshape(len(kb), 4)
    di = np.stack([2 * bonds.i, 2 * bonds.i + 1], axis=1)
    dj = np.stack([2 * bonds.j, 2 * bonds.j + 1], axis=1)
    rows, cols, vals = [], [], []
    for da, db, sign in ((di, di, 1.0), (dj, dj, 1.0), (di, dj, -1.0), (dj, di, -1.0)):
        rows.append(np.repeat(da, 2, axis=1).ravel())
        cols.append(np.tile(db, (1, 2)).ravel())
        vals.append(sign * blocks.ravel())
    n = 2 * level.node_count
    return sp.csr_matrix((np.concatenate(vals), (np.concatenate(rows), np.concatenate(cols))), shape=(n, n))


@dataclass
class LinearResponse:
    """Static field for a unit downward punch displacement."""

    displacement: np.ndarray
    punch_stiffness: float
    probe_deflection: float

    @property
    def midspan_stiffness(self) -> float:
        """Load per unit deflection of the midspan probe (excludes punch indentation)."""
        return self.punch_stiffness / self.probe_deflection


def linear_response(geom: BeamGeometry, props: BondProperties) -> LinearResponse:
    """Solve the undamaged linear problem with all constraints eliminated."""
    level = geom.level
    n = 2 * level.node_count
    K = stiffness_matrix(level, geom.bonds, props.c)
    u_p = np.zeros(n)
    fixed = np.zeros(n, dtype=bool)
    fixed[2 * geom.punch + 1] = True
    u_p[2 * geom.punch + 1] = -1.0
    fixed[2 * geom.punch[0]] = True
    # nodes cut loose by the notch carry no stiffness
    degree = np.bincount(geom.bonds.i, minlength=level.node_count) + np.bincount(geom.bonds.j, minlength=level.node_count)
    loose = np.flatnonzero(degree == 0)
    fixed[2 * loose] = True
    fixed[2 * loose + 1] = True
    dep_rows, dep_master, dep_w = [], [], []
    for a, b, wa, wb in zip(geom.sup_a, geom.sup_b, geom.sup_wa, geom.sup_wb):
        if b < 0:
            fixed[2 * a + 1] = True
        else:
            dep_rows.append(2 * b + 1)
            dep_master.append(2 * a + 1)
            dep_w.append(-wa / wb)
    dependent = np.zeros(n, dtype=bool)
    dependent[dep_rows] = True
    free = np.flatnonzero(~fixed & ~dependent)
    col = np.full(n, -1)
    col[free] = np.arange(len(free))
    T = sp.csr_matrix(
        (np.concatenate([np.ones(len(free)), dep_w]),
         (np.concatenate([free, dep_rows]).astype(np.int64), np.concatenate([col[free], col[dep_master]]))),
        shape=(n, len(free)),
    )
    K_red = (T.T @ K @ T).tocsc()
    rhs = -(T.T @ (K @ u_p))
    q = spla.splu(K_red, permc_spec="MMD_AT_PLUS_A").solve(rhs)
    u = T @ q + u_p
    reaction = -float(np.sum((K @ u)[2 * geom.punch + 1]))
    probe = -float(np.mean(u[2 * geom.probe + 1]))
    return LinearResponse(u.reshape(-1, 2), reaction, probe)


def static_punch_stiffness(geom: BeamGeometry, props: BondProperties) -> float:
    """Reaction per unit punch displacement from a linear static solve."""
    return linear_response(geom, props).punch_stiffness


def damage_onset_displacement(geom: BeamGeometry, props: BondProperties, phi: np.ndarray) -> float:
    """Punch displacement at which the first bond reaches its elastic limit."""
    X = geom.level.node_coords
    b = geom.bonds
    e = (X[b.j] - X[b.i]) / b.xi[:, None]
    s = np.einsum("ij,ij->i", phi[b.j] - phi[b.i], e) / b.xi
    pos = s > 0
    if not pos.any():
        return np.inf
    return float(np.min(props.s0[pos] / s[pos]))
