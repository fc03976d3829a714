"""Wire fields, material and solver into the MLMC level model and run cases."""

from __future__ import annotations

import json
import logging
import multiprocessing as mp
import time
from dataclasses import dataclass
from pathlib import Path
from typing import Sequence

import numpy as np

from ..fields import (
    CholeskySampler,
    KLSampler,
    check_resolution,
    coarsen_field,
    gaussian_to_marginal,
    modes_for_energy,
    property_map,
)
from ..mesh import Hierarchy, build_hierarchy, parent_index
from ..mlmc import LevelSample, MLMCResult, adaptive_mlmc
from ..seeding import seed_for
from ..solver import SampleError, prepare_beam, run_sample
from .config import CaseStudy

log = logging.getLogger(__name__)

__all__ = ["BeamLevelModel", "FieldRealiser", "run_case", "run_tasks", "seed_for"]


class FieldRealiser:
    """Same-seed Gaussian fields on every level of a hierarchy.

    The Gaussian vector is drawn on ``min(level, field_max_level)``; finer
    levels receive it by prolongation (each fine node takes its parent
    cell's value) and coarser levels by the coarsen index map.
    """

    def __init__(self, case: CaseStudy, hierarchy: Hierarchy):
        self.case = case
        self.hierarchy = hierarchy
        self.cov = case.material.covariance_spec()
        self.marginal = case.material.marginal_spec()
        self._samplers: dict[int, object] = {}

    def sampler(self, level: int):
        if level not in self._samplers:
            coords = self.hierarchy[level].node_coords
            if self.case.mesh.sampler == "kl":
                n = modes_for_energy(self.cov, coords, self.case.mesh.kl_energy)
                self._samplers[level] = KLSampler(self.cov, coords, n)
            else:
                self._samplers[level] = CholeskySampler(self.cov, coords)
        return self._samplers[level]

    def gaussian(self, level: int, seed: int) -> np.ndarray:
        cap = min(level, self.case.mesh.field_max_level)
        z = self.sampler(cap).sample(seed)
        for lev in range(cap + 1, level + 1):
            z = z[parent_index(self.hierarchy[lev], self.hierarchy[lev - 1])]
        return z

    def strength(self, z: np.ndarray) -> np.ndarray:
        fc = gaussian_to_marginal(z, self.marginal)
        return np.maximum(fc, self.case.material.fc_floor)

    def pair(self, level: int, seed: int) -> tuple[np.ndarray, np.ndarray | None]:
        """Compressive strength on ``level`` and, for level > 0, its coarsening."""
        if not self.case.material.random:
            n_f = self.hierarchy[level].node_count
            fc_f = np.full(n_f, self.case.material.fcm)
            fc_c = None if level == 0 else np.full(self.hierarchy[level - 1].node_count, self.case.material.fcm)
            return fc_f, fc_c
        z = self.gaussian(level, seed)
        fc_f = self.strength(z)
        fc_c = None if level == 0 else coarsen_field(fc_f, self.hierarchy.coarsen_map(level))
        return fc_f, fc_c


_CACHE: dict = {}


@dataclass(frozen=True)
class BeamLevelModel:
    """Picklable level model: heavy state is rebuilt lazily in each process."""

    case: CaseStudy
    max_level: int

    def _state(self):
        key = (self.case, self.max_level)
        if key not in _CACHE:
            _CACHE.clear()
            cfg = self.case.solver
            hierarchy = build_hierarchy((cfg.length, cfg.depth), self.case.mesh.dx0, self.max_level, cfg.thickness)
            geoms = [prepare_beam(lv, cfg) for lv in hierarchy.levels]
            _CACHE[key] = (hierarchy, geoms, FieldRealiser(self.case, hierarchy))
        return _CACHE[key]

    def evaluate(self, level: int, index: int) -> tuple[LevelSample, float]:
        hierarchy, geoms, realiser = self._state()
        seed = seed_for(self.case.seed, level, index)
        fc_f, fc_c = realiser.pair(level, seed)
        t0 = time.perf_counter()
        fine = run_sample(hierarchy[level], property_map(fc_f), self.case.solver, seed, geoms[level])
        work = fine.work
        cost_fine = fine.work / self.case.cost_rate
        q_c = None
        if level > 0:
            coarse = run_sample(hierarchy[level - 1], property_map(fc_c), self.case.solver, seed, geoms[level - 1])
            q_c = coarse.q
            work += coarse.work
        wall = time.perf_counter() - t0
        y = fine.q - (q_c if q_c is not None else 0.0)
        return LevelSample(level, index, seed, y, fine.q, q_c, work / self.case.cost_rate, cost_fine), wall

    def __call__(self, level: int, indices: Sequence[int]) -> list[LevelSample]:
        return [self.evaluate(level, i)[0] for i in indices]


def _evaluate_task(args):
    model, level, index = args
    try:
        sample, wall = model.evaluate(level, index)
        return sample, wall, None
    except SampleError as exc:
        return None, 0.0, {"level": level, "index": index, "error": str(exc), **exc.diagnostics}


def run_tasks(model: BeamLevelModel, level: int, indices: Sequence[int], workers: int = 1, pool=None):
    """Evaluate samples and return them sorted by index with wall times."""
    tasks = [(model, level, int(i)) for i in indices]
    if workers <= 1 or pool is None or len(tasks) <= 1:
        results = map(_evaluate_task, tasks)
    else:
        results = pool.imap_unordered(_evaluate_task, tasks)
    out, failures = [], []
    for sample, wall, failure in results:
        if failure is not None:
            failures.append(failure)
        else:
            out.append((sample, wall))
    if failures:
        raise SampleError(f"{len(failures)} sample(s) failed on level {level}", {"failures": failures})
    out.sort(key=lambda t: t[0].index)
    return out


class _ScheduledModel:
    """Adapter handed to :func:`adaptive_mlmc`; logs every sample as it lands."""

    def __init__(self, model: BeamLevelModel, workers: int, pool, partial_log: Path | None):
        self.model = model
        self.workers = workers
        self.pool = pool
        self.partial_log = partial_log
        self.wall: dict[tuple[int, int], float] = {}

    def __call__(self, level: int, indices: Sequence[int]) -> list[LevelSample]:
        indices = list(indices)
        if not indices:
            return []
        done = run_tasks(self.model, level, indices, self.workers, self.pool)
        for sample, wall in done:
            self.wall[(sample.level, sample.index)] = wall
        if self.partial_log is not None:
            with open(self.partial_log, "a") as fh:
                for sample, wall in done:
                    fh.write(f"{sample.level},{sample.index},{sample.seed},{sample.q_fine!r},{sample.q_coarse!r},"
                             f"{sample.cost!r},{wall:.3f}\n")
        return [s for s, _ in done]


def run_case(case: CaseStudy, workers: int = 1, out_dir: str | Path | None = None) -> MLMCResult:
    """Run the adaptive estimator for ``case``; write artefacts if ``out_dir`` is given."""
    from .report import emit_report, write_manifest

    if workers < 1:
        raise ValueError("workers must be >= 1")
    out = Path(out_dir) if out_dir is not None else None
    if out is not None:
        out.mkdir(parents=True, exist_ok=True)
        write_manifest(case, out, workers)
    if case.kind == "synthetic":
        model = case.synthetic
        result = adaptive_mlmc(model, case.mlmc)
        if out is not None:
            emit_report(result, out, case)
        return result
    check_resolution(case.material.covariance_spec(), case.mesh.dx0)
    beam = BeamLevelModel(case, case.mlmc.max_level)
    partial = None
    if out is not None:
        partial = out / "samples.partial.csv"
        partial.write_text("level,index,seed,q_fine,q_coarse,cost_s,wall_s\n")
    pool = mp.get_context("fork").Pool(workers) if workers > 1 else None
    scheduled = _ScheduledModel(beam, workers, pool, partial)
    try:
        result = adaptive_mlmc(scheduled, case.mlmc)
    except SampleError as exc:
        if out is not None:
            (out / "failure.json").write_text(json.dumps(exc.diagnostics, indent=2, default=str) + "\n")
        raise
    finally:
        if pool is not None:
            pool.close()
            pool.join()
    if out is not None:
        emit_report(result, out, case, wall=scheduled.wall)
        partial.unlink()
    return result
