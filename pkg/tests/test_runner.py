import json
import math

import numpy as np
import pytest

from rfimlab.runner import ExperimentConfig, _to_jsonable, main


def write_config(path, **overrides):
    base = {
        "d": 1,
        "n_list": [4, 6],
        "beta_list": [0.5],
        "h_list": [0.5],
        "ensemble_size": 25,
        "seed": 11,
        "checks": ["fkg", "field_energy_identity"],
    }
    base.update(overrides)
    path.write_text(json.dumps(base))
    return path


def test_config_defaults_and_validation(tmp_path):
    cfg = ExperimentConfig.from_dict({})
    assert cfg.d == 1 and cfg.n_list == [8] and cfg.engine == "auto"
    with pytest.raises(ValueError, match="unknown config key: 'mystery_knob'"):
        ExperimentConfig.from_dict({"mystery_knob": 1})
    with pytest.raises(ValueError, match="h must be > 0"):
        ExperimentConfig.from_dict({"h_list": [0.5, 0.0]})
    with pytest.raises(ValueError, match="beta must be > 0"):
        ExperimentConfig.from_dict({"beta_list": [-1.0]})
    with pytest.raises(ValueError, match="unknown check"):
        ExperimentConfig.from_dict({"checks": ["fkg", "bogus"]})
    with pytest.raises(ValueError, match="unknown engine"):
        ExperimentConfig.from_dict({"engine": "oracle"})
    with pytest.raises(ValueError, match="mcmc_ladder entries must be > 0"):
        ExperimentConfig.from_dict({"mcmc_ladder": [0.5, -0.2]})
    p = tmp_path / "bad.json"
    p.write_text("[1, 2]")
    with pytest.raises(ValueError, match="flat JSON object"):
        ExperimentConfig.from_file(str(p))


def test_config_hash_ignores_output_location():
    a = ExperimentConfig.from_dict({"out": "x"})
    b = ExperimentConfig.from_dict({"out": "y"})
    c = ExperimentConfig.from_dict({"seed": 99})
    assert a.config_hash() == b.config_hash()
    assert a.config_hash() != c.config_hash()
    assert len(a.config_hash()) == 12


def test_to_jsonable_scrubs_numpy_and_nan():
    obj = _to_jsonable(
        {
            "a": np.float64(1.5),
            "b": np.int32(3),
            "c": np.array([1.0, float("nan")]),
            "d": float("inf"),
            "e": np.bool_(True),
            "f": (1, 2),
        }
    )
    assert obj == {"a": 1.5, "b": 3, "c": [1.0, None], "d": None, "e": True, "f": [1, 2]}
    json.dumps(obj)


def test_run_writes_results_and_summary(tmp_path, capsys):
    cfg = write_config(tmp_path / "config.json")
    out = tmp_path / "out"
    code = main(["run", str(cfg), "--out", str(out)])
    assert code == 0
    rows = [json.loads(l) for l in (out / "results.jsonl").read_text().splitlines()]
    kinds = {r["type"] for r in rows}
    assert kinds == {"check", "observable", "aggregate", "done"}
    checks = [r for r in rows if r["type"] == "check"]
    assert len(checks) == 4  # 2 checks x 2 sizes
    rep = checks[0]["report"]
    assert set(rep) == {
        "check", "d", "n", "beta", "h", "ensemble", "lhs", "rhs",
        "slack", "se", "pass", "mode", "seed",
    }
    obs = [r for r in rows if r["type"] == "observable"]
    assert len(obs) == 2 * 25
    summary = (out / "summary.txt").read_text()
    assert "PASS fkg" in summary
    assert "checks: 4 (0 failed)" in summary
    assert capsys.readouterr().out.count("PASS") >= 4


def test_verify_and_sweep_subsets(tmp_path):
    cfg = write_config(tmp_path / "config.json")
    assert main(["verify", str(cfg), "--out", str(tmp_path / "v")]) == 0
    vrows = [json.loads(l) for l in (tmp_path / "v/results.jsonl").read_text().splitlines()]
    assert not any(r["type"] == "observable" for r in vrows)
    assert main(["sweep", str(cfg), "--out", str(tmp_path / "s")]) == 0
    srows = [json.loads(l) for l in (tmp_path / "s/results.jsonl").read_text().splitlines()]
    assert not any(r["type"] == "check" for r in srows)
    assert any(r["type"] == "aggregate" for r in srows)


def test_mcmc_ladder_flows_into_checks(tmp_path):
    cfg = write_config(
        tmp_path / "config.json",
        n_list=[4],
        checks=["overlap_variance"],
        engine="mcmc",
        ensemble_size=6,
        mcmc_sweeps=400,
        mcmc_burn_in=40,
        mcmc_ladder=[0.25, 1.0],
    )
    out = tmp_path / "out"
    assert main(["verify", str(cfg), "--out", str(out)]) == 0
    rows = [json.loads(l) for l in (out / "results.jsonl").read_text().splitlines()]
    report = next(r for r in rows if r["type"] == "check")["report"]
    assert report["mode"] == "mc" and report["pass"] is True


def test_failing_check_sets_exit_code(tmp_path):
    # a two-point size sweep cannot show the required factor-two decay
    cfg = write_config(
        tmp_path / "config.json", checks=["gg_trend"], n_list=[4, 5], ensemble_size=40
    )
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 1


def test_warned_pass_keeps_exit_zero(tmp_path, capsys):
    cfg = write_config(
        tmp_path / "config.json", checks=["concentration"], n_list=[6], ensemble_size=30
    )
    assert main(["run", str(cfg), "--out", str(tmp_path / "out")]) == 0
    assert "WARN" in capsys.readouterr().out


def test_resume_after_interrupt_is_byte_identical(tmp_path):
    cfg = write_config(tmp_path / "config.json", seed=21)
    full = tmp_path / "full"
    assert main(["run", str(cfg), "--out", str(full)]) == 0
    reference = (full / "results.jsonl").read_bytes()

    cut = tmp_path / "cut"
    cut.mkdir()
    lines = reference.splitlines(keepends=True)
    # cut inside a unit (between its rows and its completion marker) and
    # leave a torn half-record behind
    torn = b"".join(lines[:30]) + b'{"type": "obs'
    (cut / "results.jsonl").write_bytes(torn)
    assert main(["run", str(cfg), "--out", str(cut), "--resume"]) == 0
    assert (cut / "results.jsonl").read_bytes() == reference

    # resuming a complete file is a no-op
    assert main(["run", str(cfg), "--out", str(cut), "--resume"]) == 0
    assert (cut / "results.jsonl").read_bytes() == reference


def test_refuses_overwrite_without_resume(tmp_path, capsys):
    cfg = write_config(tmp_path / "config.json")
    out = tmp_path / "out"
    assert main(["run", str(cfg), "--out", str(out)]) == 0
    assert main(["run", str(cfg), "--out", str(out)]) == 2
    assert "--resume" in capsys.readouterr().err


def test_worker_pool_output_matches_serial(tmp_path):
    cfg = write_config(tmp_path / "config.json", seed=33)
    a = tmp_path / "serial"
    b = tmp_path / "pooled"
    assert main(["run", str(cfg), "--out", str(a)]) == 0
    assert main(["run", str(cfg), "--out", str(b), "--workers", "3"]) == 0
    assert (a / "results.jsonl").read_bytes() == (b / "results.jsonl").read_bytes()


def test_seed_override_changes_hash_group(tmp_path):
    cfg = write_config(tmp_path / "config.json", seed=1)
    out1 = tmp_path / "o1"
    out2 = tmp_path / "o2"
    assert main(["run", str(cfg), "--out", str(out1)]) == 0
    assert main(["run", str(cfg), "--out", str(out2), "--seed", "2"]) == 0
    h1 = json.loads((out1 / "results.jsonl").read_text().splitlines()[0])["config_hash"]
    h2 = json.loads((out2 / "results.jsonl").read_text().splitlines()[0])["config_hash"]
    assert h1 != h2


def test_report_emits_csv_tables(tmp_path, capsys):
    cfg = write_config(
        tmp_path / "config.json",
        checks=["concentration", "gg_trend"],
        n_list=[4, 6],
        ensemble_size=40,
    )
    out = tmp_path / "out"
    main(["run", str(cfg), "--out", str(out)])
    capsys.readouterr()
    rep = tmp_path / "rep"
    assert main(["report", str(out), "--out", str(rep)]) == 0
    printed = capsys.readouterr().out
    assert "== config" in printed
    conc = list(rep.glob("concentration_*.csv"))
    assert len(conc) == 1
    lines = conc[0].read_text().splitlines()
    assert lines[0] == "n,mean_r12,var_r12,se"
    assert len(lines) == 3
    n4 = lines[1].split(",")
    assert int(n4[0]) == 4
    assert all(math.isfinite(float(v)) for v in n4[1:])
    gg = list(rep.glob("gg_residuals_*.csv"))
    assert gg and gg[0].read_text().splitlines()[0] == "n,gg1,se1,gg2,se2"
    agg = list(rep.glob("overlaps_*.csv"))
    assert agg and len(agg[0].read_text().splitlines()) == 3


def test_report_groups_by_config(tmp_path, capsys):
    a = write_config(tmp_path / "a.json", seed=1, checks=["fkg"], n_list=[4])
    b = write_config(tmp_path / "b.json", seed=2, checks=["fkg"], n_list=[4])
    main(["run", str(a), "--out", str(tmp_path / "oa")])
    main(["run", str(b), "--out", str(tmp_path / "ob")])
    merged = tmp_path / "merged"
    merged.mkdir()
    with open(merged / "results.jsonl", "w") as fh:
        fh.write((tmp_path / "oa/results.jsonl").read_text())
        fh.write((tmp_path / "ob/results.jsonl").read_text())
    capsys.readouterr()
    assert main(["report", str(merged)]) == 0
    assert capsys.readouterr().out.count("== config") == 2


def test_report_empty_directory(tmp_path, capsys):
    empty = tmp_path / "none"
    empty.mkdir()
    assert main(["report", str(empty)]) == 1
    assert "no records found" in capsys.readouterr().err


def test_cli_error_messages(tmp_path, capsys):
    bad = tmp_path / "bad.json"
    bad.write_text(json.dumps({"h_list": [0.0]}))
    assert main(["run", str(bad)]) == 2
    assert "h must be > 0" in capsys.readouterr().err
    missing = tmp_path / "missing.json"
    assert main(["run", str(missing)]) == 2
    assert "error:" in capsys.readouterr().err
