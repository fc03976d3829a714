"""Uniform cell-centred grids, peridynamic bond lists and level-to-level maps.

Every level of a :class:`Hierarchy` discretises the same rectangle with square
cells of side ``dx0 / 2**level``; one node sits at each cell centre and
carries the volume ``dx**2 * thickness``.  Node ``(ix, iy)`` is stored at
index ``iy * nx + ix``.

Cell centres of consecutive levels never coincide (the fine centres sit at
``+-dx_fine/2`` from the coarse ones), so the coarse-to-fine map sends each
coarse node to one fixed child: the fine node at offset
``(-dx_fine/2, -dx_fine/2)``.  The image lattice is a rigid translate of the
coarse lattice, which is all a stationary random field needs to keep its law.
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass, field

import numpy as np
from scipy.spatial import cKDTree

HORIZON_RATIO = math.pi

_ALIGN_TOL = 1e-9


class SizingError(ValueError):
    """Domain sides are not integer multiples of the coarse spacing."""


class MeshAlignmentError(RuntimeError):
    """A coarse node has no image on the finer lattice."""


@dataclass(frozen=True)
class Bonds:
    """Unordered bond list, ``i < j`` for every entry."""

    i: np.ndarray
    j: np.ndarray
    xi: np.ndarray
    volume_factor: np.ndarray

    def __len__(self) -> int:
        return len(self.i)

    def subset(self, keep: np.ndarray) -> "Bonds":
        return Bonds(self.i[keep], self.j[keep], self.xi[keep], self.volume_factor[keep])


@dataclass
class MeshLevel:
    level: int
    dx: float
    nx: int
    ny: int
    node_coords: np.ndarray
    horizon: float
    thickness: float
    origin: tuple[float, float] = (0.0, 0.0)
    bonds: Bonds | None = field(default=None, repr=False)

    @property
    def node_count(self) -> int:
        return self.nx * self.ny

    @property
    def node_volume(self) -> float:
        return self.dx * self.dx * self.thickness

    def summary(self) -> dict:
        return {
            "level": self.level,
            "dx": self.dx,
            "nodes": self.node_count,
            "horizon": self.horizon,
            "bonds": None if self.bonds is None else len(self.bonds),
        }


@dataclass(frozen=True)
class CoarsenMap:
    """``index[c]`` is the fine node whose value coarse node ``c`` takes."""

    fine_level: int
    coarse_level: int
    index: np.ndarray
    n_fine: int

    def __len__(self) -> int:
        return len(self.index)


@dataclass
class Hierarchy:
    levels: list[MeshLevel]
    coarsen_maps: list[CoarsenMap]

    @property
    def max_level(self) -> int:
        return len(self.levels) - 1

    def __getitem__(self, level: int) -> MeshLevel:
        return self.levels[level]

    def coarsen_map(self, fine_level: int) -> CoarsenMap:
        """Map from level ``fine_level - 1`` onto level ``fine_level``."""
        return self.coarsen_maps[fine_level - 1]

    def composed_map(self, fine_level: int, coarse_level: int) -> np.ndarray:
        idx = np.arange(self.levels[coarse_level].node_count)
        for lev in range(coarse_level + 1, fine_level + 1):
            idx = self.coarsen_map(lev).index[idx]
        return idx

    def summary(self) -> list[dict]:
        return [lvl.summary() for lvl in self.levels]

    def to_json(self) -> str:
        return json.dumps(self.summary(), indent=2)


def _cells(length: float, dx: float) -> int:
    n = length / dx
    n_int = int(round(n))
    if n_int < 1 or abs(n - n_int) > 1e-9 * max(1.0, n):
        raise SizingError(f"side {length!r} is not an integer multiple of dx={dx!r}")
    return n_int


def make_level(domain, dx: float, level: int, thickness: float, with_bonds: bool = True) -> MeshLevel:
    """Single cell-centred grid on ``domain = (width, height)`` or ``(x0, y0, width, height)``."""
    if dx <= 0:
        raise SizingError("dx must be positive")
    if len(domain) == 2:
        x0, y0, width, height = 0.0, 0.0, float(domain[0]), float(domain[1])
    else:
        x0, y0, width, height = (float(v) for v in domain)
    nx, ny = _cells(width, dx), _cells(height, dx)
    xs = x0 + (np.arange(nx) + 0.5) * dx
    ys = y0 + (np.arange(ny) + 0.5) * dx
    gx, gy = np.meshgrid(xs, ys)
    coords = np.column_stack([gx.ravel(), gy.ravel()])
    lvl = MeshLevel(
        level=level,
        dx=dx,
        nx=nx,
        ny=ny,
        node_coords=coords,
        horizon=HORIZON_RATIO * dx,
        thickness=thickness,
        origin=(x0, y0),
    )
    if with_bonds:
        lvl.bonds = build_bonds(lvl)
    return lvl


def build_hierarchy(domain, dx0: float, L: int, thickness: float, with_bonds: bool = True) -> Hierarchy:
    """Levels ``0..L`` with spacing halved at each step, plus the coarsen maps."""
    if dx0 <= 0:
        raise SizingError("dx0 must be positive")
    if L < 0:
        raise ValueError("L must be >= 0")
    levels = [make_level(domain, dx0 / 2**lev, lev, thickness, with_bonds) for lev in range(L + 1)]
    maps = [coarsen_index_map(levels[lev + 1], levels[lev]) for lev in range(L)]
    return Hierarchy(levels, maps)


def partial_volume_factor(xi: np.ndarray, horizon: float, dx: float) -> np.ndarray:
    """Fraction of the neighbour cell inside the horizon (linear cut-off)."""
    lam = np.clip((horizon + 0.5 * dx - xi) / dx, 0.0, 1.0)
    return np.where(xi <= horizon - 0.5 * dx, 1.0, lam)


def build_bonds(level: MeshLevel) -> Bonds:
    """All unordered node pairs with ``0 < xi <= horizon``."""
    coords = level.node_coords
    if len(coords) < 2:
        empty = np.zeros(0)
        return Bonds(empty.astype(np.int64), empty.astype(np.int64), empty, empty)
    tree = cKDTree(coords)
    pairs = tree.query_pairs(r=level.horizon * (1.0 + 1e-12), output_type="ndarray")
    if len(pairs):
        order = np.lexsort((pairs[:, 1], pairs[:, 0]))
        pairs = pairs[order]
    i = pairs[:, 0].astype(np.int64)
    j = pairs[:, 1].astype(np.int64)
    xi = np.linalg.norm(coords[j] - coords[i], axis=1)
    keep = (xi > 0) & (xi <= level.horizon)
    i, j, xi = i[keep], j[keep], xi[keep]
    return Bonds(i, j, xi, partial_volume_factor(xi, level.horizon, level.dx))


def coarsen_index_map(fine: MeshLevel, coarse: MeshLevel) -> CoarsenMap:
    """Locate, for every coarse node, its designated child on the fine lattice."""
    if not math.isclose(2.0 * fine.dx, coarse.dx, rel_tol=1e-12):
        raise ValueError(f"levels are not consecutive: dx {fine.dx} vs {coarse.dx}")
    target = coarse.node_coords - 0.5 * fine.dx
    fx0 = fine.origin[0] + 0.5 * fine.dx
    fy0 = fine.origin[1] + 0.5 * fine.dx
    ix = np.rint((target[:, 0] - fx0) / fine.dx).astype(np.int64)
    iy = np.rint((target[:, 1] - fy0) / fine.dx).astype(np.int64)
    inside = (ix >= 0) & (ix < fine.nx) & (iy >= 0) & (iy < fine.ny)
    if not inside.all():
        raise MeshAlignmentError(f"{int((~inside).sum())} coarse nodes fall outside the fine grid")
    index = iy * fine.nx + ix
    err = np.abs(fine.node_coords[index] - target).max(initial=0.0)
    if err > _ALIGN_TOL * fine.dx:
        raise MeshAlignmentError(f"coarse/fine lattices misaligned by {err:g}")
    if len(np.unique(index)) != len(index):
        raise MeshAlignmentError("coarsen map is not injective")
    return CoarsenMap(fine.level, coarse.level, index, fine.node_count)


def parent_index(fine: MeshLevel, coarse: MeshLevel) -> np.ndarray:
    """Coarse cell containing each fine node (used to prolong capped fields)."""
    ix = np.arange(fine.node_count) % fine.nx
    iy = np.arange(fine.node_count) // fine.nx
    if fine.nx != 2 * coarse.nx or fine.ny != 2 * coarse.ny:
        raise MeshAlignmentError("levels are not a 2x refinement of each other")
    return (iy // 2) * coarse.nx + ix // 2
