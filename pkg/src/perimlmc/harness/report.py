"""Result persistence: JSON summary, CSV logs and tables, SVG plots.

Every file written here is a pure function of its inputs.  Matplotlib's SVG
backend embeds a date and random element ids unless told otherwise, so both
are pinned.
"""

from __future__ import annotations

import csv
import io
import json
import math
from pathlib import Path

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

from .. import __version__  # noqa: E402
from ..mlmc import (  # noqa: E402
    MLMCResult,
    _effective_variances,
    allocate_samples,
    cost_comparison,
    mc_num_samples,
    predict_cost_growth,
)
from .config import CaseStudy  # noqa: E402

EPS_FACTORS = (4.0, 2.0, 1.0, 0.5, 0.25)


def _clean(obj):
    """Replace non-finite floats (not valid JSON) with strings."""
    if isinstance(obj, float):
        return obj if math.isfinite(obj) else str(obj)
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    return obj


def dump_json(obj, path: Path) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True) + "\n")


def write_manifest(case: CaseStudy, out: Path, workers: int) -> None:
    dump_json(
        {
            "artifact_version": __version__,
            "case": case.to_dict(),
            "workers": workers,
            "samples_csv": "samples.csv",
            "summary_json": "summary.json",
        },
        out / "manifest.json",
    )


def eps_grid(eps_s: float) -> list[float]:
    return [eps_s * f for f in EPS_FACTORS]


def allocation_table(result: MLMCResult, eps_values=None) -> list[dict]:
    """Predicted N_l per tolerance from the run's V_l and C_l, plus plain MC N."""
    eps_values = eps_values or eps_grid(result.config.eps_s)
    V = _effective_variances(result.levels, result.config.min_variance_samples)
    C = [s.cost for s in result.levels]
    vq = result.levels[-1].variance_q
    rows = []
    for eps in eps_values:
        row = {"eps_s": eps}
        for lev, n in enumerate(allocate_samples(V, C, eps)):
            row[f"N{lev}"] = n
        row["N_mc"] = mc_num_samples(vq, eps) if math.isfinite(vq) else ""
        rows.append(row)
    return rows


def cost_table(result: MLMCResult, eps_values=None) -> list[dict]:
    """MLMC and plain MC cost per tolerance, in seconds and level-0 sample units."""
    eps_values = eps_values or eps_grid(result.config.eps_s)
    c0 = result.levels[0].cost
    rows = []
    for eps in eps_values:
        if not math.isfinite(result.levels[-1].variance_q):
            break
        cmp = cost_comparison(result.levels, eps, result.config.min_variance_samples)
        rows.append({
            "eps_s": eps,
            "mlmc_cost_s": cmp["mlmc_cost"],
            "mc_cost_s": cmp["mc_cost"],
            "mlmc_cost_rel": cmp["mlmc_cost"] / c0,
            "mc_cost_rel": cmp["mc_cost"] / c0,
            "speedup": cmp["speedup"],
        })
    return rows


def _csv_text(rows: list[dict]) -> str:
    if not rows:
        return ""
    buf = io.StringIO()
    keys = list(rows[0])
    for r in rows[1:]:
        keys += [k for k in r if k not in keys]
    writer = csv.DictWriter(buf, fieldnames=keys, lineterminator="\n")
    writer.writeheader()
    writer.writerows(rows)
    return buf.getvalue()


def samples_rows(result: MLMCResult) -> list[dict]:
    return [
        {
            "level": s.level,
            "index": s.index,
            "seed": s.seed,
            "q_fine": repr(s.q_fine),
            "q_coarse": "" if s.q_coarse is None else repr(s.q_coarse),
            "cost_s": repr(s.cost),
        }
        for s in result.samples
    ]


def summary(result: MLMCResult) -> dict:
    out = result.to_dict()
    if result.rates is not None and result.rates.alpha > 0:
        out["cost_exponents"] = predict_cost_growth(result.rates)
    if len(result.levels) >= 1 and math.isfinite(result.levels[-1].variance_q):
        out["cost_comparison"] = cost_comparison(result.levels, result.config.eps_s,
                                                 result.config.min_variance_samples)
    return out


def _svg(fig, path: Path) -> None:
    with matplotlib.rc_context({"svg.hashsalt": "perimlmc", "svg.fonttype": "none"}):
        fig.savefig(path, format="svg", metadata={"Date": None, "Creator": None})
    plt.close(fig)


def plot_rates(result: MLMCResult, path: Path) -> None:
    lev = [s.level for s in result.levels]
    fig, (ax1, ax2) = plt.subplots(1, 2, figsize=(9, 3.6))
    ax1.semilogy(lev, [abs(s.mean_q) for s in result.levels], "o-", label="Q")
    ylev = [s.level for s in result.levels[1:] if s.mean_y != 0]
    ax1.semilogy(ylev, [abs(s.mean_y) for s in result.levels[1:] if s.mean_y != 0], "s--", label="Y")
    ax1.set_xlabel("level")
    ax1.set_ylabel("|mean|")
    ax1.legend()
    vq = [(s.level, s.variance_q) for s in result.levels if s.variance_q > 0]
    vy = [(s.level, s.variance) for s in result.levels[1:] if s.variance > 0]
    if vq:
        ax2.semilogy(*zip(*vq), "o-", label="Q")
    if vy:
        ax2.semilogy(*zip(*vy), "s--", label="Y")
    ax2.set_xlabel("level")
    ax2.set_ylabel("variance")
    ax2.legend()
    if result.rates is not None:
        fig.suptitle(f"alpha={result.rates.alpha:.3f}  beta={result.rates.beta:.3f}  gamma={result.rates.gamma:.3f}")
    fig.tight_layout()
    _svg(fig, path)


def plot_cost(rows: list[dict], path: Path) -> None:
    fig, ax = plt.subplots(figsize=(4.8, 3.6))
    if rows:
        eps = [r["eps_s"] for r in rows]
        ax.loglog(eps, [r["eps_s"] ** 2 * r["mlmc_cost_s"] for r in rows], "o-", label="MLMC")
        ax.loglog(eps, [r["eps_s"] ** 2 * r["mc_cost_s"] for r in rows], "s--", label="MC")
        ax.legend()
    ax.set_xlabel("sampling tolerance")
    ax.set_ylabel("tolerance^2 x cost")
    fig.tight_layout()
    _svg(fig, path)


def emit_report(result: MLMCResult, out: str | Path, case: CaseStudy | None = None,
                wall: dict | None = None) -> dict[str, Path]:
    """Write summary, samples, tables and plots under ``out``; return the paths."""
    out = Path(out)
    (out / "plots").mkdir(parents=True, exist_ok=True)
    paths = {
        "summary": out / "summary.json",
        "samples": out / "samples.csv",
        "allocation": out / "allocation.csv",
        "cost": out / "cost.csv",
        "rates_plot": out / "plots" / "rates.svg",
        "cost_plot": out / "plots" / "cost.svg",
    }
    dump_json(summary(result), paths["summary"])
    paths["samples"].write_text(_csv_text(samples_rows(result)))
    paths["allocation"].write_text(_csv_text(allocation_table(result)))
    costs = cost_table(result)
    paths["cost"].write_text(_csv_text(costs))
    plot_rates(result, paths["rates_plot"])
    plot_cost(costs, paths["cost_plot"])
    if wall:
        # wall-clock seconds vary between runs, so they live apart from the byte-stable outputs
        rows = [{"level": k[0], "index": k[1], "wall_s": f"{v:.3f}"} for k, v in sorted(wall.items())]
        paths["timing"] = out / "timing.csv"
        paths["timing"].write_text(_csv_text(rows))
    return paths
