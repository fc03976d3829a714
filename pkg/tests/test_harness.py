import csv
import dataclasses
import hashlib
import json
import time

import numpy as np
import pytest

from perimlmc.harness import cli
from perimlmc.harness.config import CaseStudy, MaterialConfig, MeshConfig, case_from_dict, load_case, preset
from perimlmc.harness.report import emit_report
from perimlmc.harness.runner import FieldRealiser, run_case
from perimlmc.mesh import build_hierarchy
from perimlmc.mlmc import MLMCConfig, PowerLawModel, adaptive_mlmc
from perimlmc.seeding import seed_for


def test_notched_preset_parameters():
    case = preset("specimen3-notched")
    s, m = case.solver, case.material
    assert (s.length, s.depth, s.thickness, s.span) == (0.35, 0.10, 0.05, 0.25)
    assert s.notch_ratio == 0.5
    assert (m.fcm, m.lc, m.weibull_modulus, m.marginal) == (42.3, 0.02, 3.0, "weibull")
    assert (s.k, s.alpha_soft) == (25.0, 0.25)
    assert preset("specimen3-unnotched").solver.notch_ratio == 0.0
    with pytest.raises(ValueError):
        preset("specimen9")


def test_correlation_length_must_exceed_coarse_spacing():
    with pytest.raises(ValueError):
        CaseStudy("x", material=MaterialConfig(lc=0.01), mesh=MeshConfig(dx0=0.01))
    with pytest.raises(ValueError):
        case_from_dict({"preset": "specimen3-notched", "material": {"lc": 0.005}})


def test_yaml_config_with_overrides(tmp_path):
    path = tmp_path / "case.yaml"
    path.write_text("preset: specimen3-notched\nname: mine\nseed: 5\nmlmc:\n  eps_s: 50.0\nsolver:\n  damping: 400.0\n")
    case = load_case(path)
    assert case.name == "mine" and case.seed == 5
    assert case.mlmc.eps_s == 50.0 and case.mlmc.warmup == preset("specimen3-notched").mlmc.warmup
    assert case.solver.damping == 400.0 and case.solver.notch_ratio == 0.5
    assert case.with_overrides(eps_s=20.0, max_level=None).mlmc.eps_s == 20.0
    path.write_text("mlmc:\n  epsilon: 1.0\n")
    with pytest.raises(ValueError, match="epsilon"):
        load_case(path)
    path.write_text("solvr: {}\n")
    with pytest.raises(ValueError):
        load_case(path)


@pytest.fixture(scope="module")
def synthetic_run(tmp_path_factory):
    out = tmp_path_factory.mktemp("synthetic")
    t0 = time.perf_counter()
    result = run_case(preset("synthetic"), out_dir=out)
    return result, out, time.perf_counter() - t0


def test_synthetic_preset_end_to_end(synthetic_run):
    result, out, wall = synthetic_run
    assert wall < 60
    assert result.converged
    assert abs(result.estimate - 10.0) <= 1.96 * result.rmse * 2
    for name in ("manifest.json", "summary.json", "samples.csv", "allocation.csv", "cost.csv",
                 "plots/rates.svg", "plots/cost.svg"):
        assert (out / name).stat().st_size > 0
    manifest = json.loads((out / "manifest.json").read_text())
    assert manifest["case"]["name"] == "synthetic"
    assert (out / "plots/rates.svg").read_text().lstrip().startswith("<?xml")


def test_allocation_table_layout(synthetic_run):
    result, out, _ = synthetic_run
    with open(out / "allocation.csv") as fh:
        rows = list(csv.DictReader(fh))
    header = list(rows[0])
    assert header == ["eps_s"] + [f"N{lev}" for lev in range(result.L + 1)] + ["N_mc"]
    assert len(rows) == 5
    # tighter tolerances never need fewer samples
    n0 = [int(r["N0"]) for r in rows]
    assert n0 == sorted(n0)
    with open(out / "samples.csv") as fh:
        assert next(csv.reader(fh)) == ["level", "index", "seed", "q_fine", "q_coarse", "cost_s"]


def test_report_is_byte_stable(synthetic_run, tmp_path):
    result, out, _ = synthetic_run
    a, b = tmp_path / "a", tmp_path / "b"
    pa, pb = emit_report(result, a), emit_report(result, b)
    for key in pa:
        assert pa[key].read_bytes() == pb[key].read_bytes(), key
    assert (a / "summary.json").read_bytes() == (out / "summary.json").read_bytes()


def test_one_level_result_gives_valid_json(tmp_path):
    cfg = MLMCConfig(eps_s=0.5, eps_b=1.0, warmup=10, max_level=0, min_level=0)
    result = adaptive_mlmc(PowerLawModel(), cfg)
    paths = emit_report(result, tmp_path)
    data = json.loads(paths["summary"].read_text())
    assert data["L"] == 0 and len(data["levels"]) == 1


def test_coarse_evaluation_consumes_the_fine_realisation():
    case = preset("specimen3-notched")
    h = build_hierarchy((0.35, 0.10), 0.01, 3, 0.05, with_bonds=False)
    realiser = FieldRealiser(case, h)
    digest = lambda a: hashlib.sha256(np.ascontiguousarray(a).tobytes()).hexdigest()  # noqa: E731
    for level in (1, 2, 3):
        seed = seed_for(case.seed, level, 4)
        fine, coarse = realiser.pair(level, seed)
        assert digest(coarse) == digest(fine[h.coarsen_map(level).index])
        # the designated child sits inside the coarse cell it represents
        fine_xy = h[level].node_coords[h.coarsen_map(level).index]
        assert np.abs(fine_xy - h[level - 1].node_coords).max() <= 0.5 * h[level - 1].dx
    # fields beyond the sampling cap are piecewise constant over parent cells
    z3 = realiser.gaussian(3, 11)
    assert np.array_equal(z3[h.coarsen_map(3).index], realiser.gaussian(2, 11))


def test_worker_count_does_not_change_the_summary(tmp_path):
    case = dataclasses.replace(
        preset("specimen3-notched"),
        mlmc=MLMCConfig(eps_s=1e4, eps_b=1e4, warmup=3, max_level=1),
    )
    run_case(case, workers=1, out_dir=tmp_path / "w1")
    run_case(case, workers=2, out_dir=tmp_path / "w2")
    for name in ("summary.json", "samples.csv", "allocation.csv"):
        assert (tmp_path / "w1" / name).read_bytes() == (tmp_path / "w2" / name).read_bytes()
    assert not (tmp_path / "w1" / "samples.partial.csv").exists()


def test_cli_commands(tmp_path, capsys):
    out = tmp_path / "syn"
    assert cli.main(["run", "--preset", "synthetic", "--out", str(out)]) == 0
    assert "estimate" in capsys.readouterr().out
    assert cli.main(["rates", str(out / "samples.csv")]) == 0
    text = capsys.readouterr().out
    assert "alpha=" in text and "cost exponents" in text
    assert cli.main(["field", "--preview", "--level", "1", "--out", str(tmp_path / "f")]) == 0
    rows = (tmp_path / "f" / "field.csv").read_text().splitlines()
    assert len(rows) == 2 + 1400
    assert (tmp_path / "f" / "field.svg").exists()
    assert cli.main(["field"]) == 1
    assert cli.main(["simulate", "--level", "0", "--out", str(tmp_path / "s")]) == 0
    peak = json.loads((tmp_path / "s" / "peak.json").read_text())
    assert 1000 < peak["peak_N"] < 2500
