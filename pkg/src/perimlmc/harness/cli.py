"""Command line: ``perimlmc run|rates|field|simulate``."""

from __future__ import annotations

import argparse
import csv
import dataclasses
import json
import logging
import sys
from pathlib import Path

import numpy as np

from ..mlmc import LevelSample, LevelStats, estimate_rates, predict_cost_growth
from .config import PRESETS, CaseStudy, load_case, preset


def _case_from_args(args) -> CaseStudy:
    if getattr(args, "config", None):
        case = load_case(args.config)
    else:
        case = preset(args.preset or "specimen3-notched")
    case = case.with_overrides(
        eps_s=getattr(args, "eps_s", None),
        eps_b=getattr(args, "eps_b", None),
        max_level=getattr(args, "max_level", None),
        warmup=getattr(args, "warmup", None),
    )
    if getattr(args, "seed", None) is not None:
        case = dataclasses.replace(case, seed=args.seed)
    return case


def cmd_run(args) -> int:
    from .runner import run_case

    case = _case_from_args(args)
    out = Path(args.out or f"runs/{case.name}")
    result = run_case(case, workers=args.workers, out_dir=out)
    print(f"case        {case.name}")
    print(f"estimate    {result.estimate:.6g}")
    print(f"bias        {result.bias:.4g}")
    print(f"sampling    {result.sampling_error:.4g}")
    print(f"levels      {result.L}  allocation {result.allocation}")
    print(f"status      {result.message}")
    print(f"output      {out}")
    return 0 if result.converged else 2


def read_samples_csv(path: str | Path) -> dict[int, list[LevelSample]]:
    by_level: dict[int, list[LevelSample]] = {}
    with open(path) as fh:
        for row in csv.DictReader(fh):
            lev = int(row["level"])
            qf = float(row["q_fine"])
            qc = float(row["q_coarse"]) if row.get("q_coarse") else None
            y = qf - qc if qc is not None else qf
            s = LevelSample(lev, int(row.get("index", 0)), int(row["seed"]), y, qf, qc, float(row["cost_s"]))
            by_level.setdefault(lev, []).append(s)
    return by_level


def cmd_rates(args) -> int:
    by_level = read_samples_csv(args.samples)
    levels = [LevelStats.from_samples(k, by_level[k]) for k in sorted(by_level)]
    rates = estimate_rates(levels, args.m_ref)
    print("level,n,mean_y,var_y,mean_q,var_q,cost_s")
    for s in levels:
        print(f"{s.level},{s.n_samples},{s.mean_y:.6g},{s.variance:.6g},{s.mean_q:.6g},{s.variance_q:.6g},{s.cost:.6g}")
    print(f"alpha={rates.alpha:.4f} beta={rates.beta:.4f} gamma={rates.gamma:.4f}")
    if rates.alpha > 0:
        exps = predict_cost_growth(rates)
        print(f"cost exponents: mlmc={exps['mlmc']:.3f} mc={exps['mc']:.3f}")
    return 0


def cmd_field(args) -> int:
    from ..mesh import build_hierarchy
    from ..seeding import seed_for
    from .report import _svg
    from .runner import FieldRealiser

    if not args.preview:
        print("nothing to do: pass --preview", file=sys.stderr)
        return 1
    case = _case_from_args(args)
    cfg = case.solver
    hierarchy = build_hierarchy((cfg.length, cfg.depth), case.mesh.dx0, args.level, cfg.thickness, with_bonds=False)
    realiser = FieldRealiser(case, hierarchy)
    seed = seed_for(case.seed, args.level, args.index)
    fc = realiser.strength(realiser.gaussian(args.level, seed))
    lv = hierarchy[args.level]
    out = Path(args.out or "field_preview")
    out.mkdir(parents=True, exist_ok=True)
    with open(out / "field.csv", "w") as fh:
        fh.write(f"# seed={seed} level={args.level} index={args.index}\n")
        fh.write("node,x,y,fc_mpa\n")
        for n, ((x, y), v) in enumerate(zip(lv.node_coords, fc)):
            fh.write(f"{n},{x!r},{y!r},{v!r}\n")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(7, 2.4))
    im = ax.imshow(fc.reshape(lv.ny, lv.nx), origin="lower", extent=(0, cfg.length * 1e3, 0, cfg.depth * 1e3))
    fig.colorbar(im, ax=ax, label="fc [MPa]")
    ax.set_xlabel("x [mm]")
    ax.set_ylabel("y [mm]")
    fig.tight_layout()
    _svg(fig, out / "field.svg")
    print(f"seed {seed}: mean {fc.mean():.3f} MPa, sd {fc.std():.3f} MPa -> {out}")
    return 0


def cmd_simulate(args) -> int:
    from ..fields import property_map
    from ..mesh import make_level
    from ..solver import HISTORY_COLUMNS, run_sample

    case = _case_from_args(args)
    cfg = case.solver
    lv = make_level((cfg.length, cfg.depth), case.mesh.dx0 / 2**args.level, args.level, cfg.thickness)
    fields = property_map(np.full(lv.node_count, case.material.fcm))
    sample = run_sample(lv, fields, cfg)
    print(f"level {args.level}: peak load {sample.q:.2f} N after {sample.steps} steps ({sample.stop})")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        np.savetxt(out / "history.csv", sample.history, delimiter=",", header=",".join(HISTORY_COLUMNS), comments="")
        (out / "peak.json").write_text(json.dumps({"level": args.level, "peak_N": sample.q, "steps": sample.steps}) + "\n")
    return 0


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="perimlmc", description=__doc__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def case_args(sp):
        sp.add_argument("config", nargs="?", help="YAML case file")
        sp.add_argument("--preset", choices=sorted(PRESETS))
        sp.add_argument("--seed", type=int)

    r = sub.add_parser("run", help="run the adaptive estimator for a case")
    case_args(r)
    r.add_argument("--workers", type=int, default=1)
    r.add_argument("--eps-s", type=float)
    r.add_argument("--eps-b", type=float)
    r.add_argument("--max-level", type=int)
    r.add_argument("--warmup", type=int)
    r.add_argument("--out")
    r.set_defaults(func=cmd_run)

    rt = sub.add_parser("rates", help="re-fit alpha/beta/gamma from a samples.csv")
    rt.add_argument("samples")
    rt.add_argument("--m-ref", type=float, default=4.0)
    rt.set_defaults(func=cmd_rates)

    f = sub.add_parser("field", help="dump one random-field realisation")
    case_args(f)
    f.add_argument("--preview", action="store_true")
    f.add_argument("--level", type=int, default=0)
    f.add_argument("--index", type=int, default=0)
    f.add_argument("--out")
    f.set_defaults(func=cmd_field)

    s = sub.add_parser("simulate", help="deterministic peak load on one level")
    case_args(s)
    s.add_argument("--level", type=int, default=0)
    s.add_argument("--out")
    s.set_defaults(func=cmd_simulate)
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
