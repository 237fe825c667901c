"""Experiment orchestration: config-driven sweeps, persistence, reporting.

Work is split into deterministic units (one check or one observable cell),
executed by an optional process pool, and appended to a JSONL results file
in a fixed canonical order, so the output bytes do not depend on worker
count or scheduling. Each unit's rows end with a terminal marker; resuming
skips units whose marker is already on disk, which makes kill-and-resume
produce the same file as an uninterrupted run.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import math
import os
import sys
from dataclasses import dataclass, field, fields

import numpy as np

from .errors import CapacityError
from . import verify as V

_CONFIG_DEFAULTS = {
    "d": 1,
    "n_list": [8],
    "beta_list": [0.5],
    "h_list": [0.5],
    "ensemble_size": 200,
    "engine": "auto",
    "mcmc_sweeps": 4000,
    "mcmc_burn_in": 400,
    "mcmc_ladder": None,
    "seed": 0,
    "checks": ["fkg"],
    "out": "results",
    "order": 64,
    "block_m": 2,
    "h_grid": None,
}

# checks that consume the whole n_list at once
_TREND_CHECKS = ("gg_trend", "field_energy_concentration", "concentration")

_CHECK_NAMES = (
    "fkg",
    "free_energy_variance",
    "overlap_variance",
    "covariance_square_sum",
    "field_energy_identity",
    "gg_identity_r12",
    "gg_identity_r23",
    "gg_trend",
    "convexity",
    "block_decomposition",
    "hermite_basis",
    "fourth_derivative_bound",
    "field_energy_concentration",
    "concentration",
)


@dataclass
class ExperimentConfig:
    """Validated flat configuration for one experiment."""

    d: int = 1
    n_list: list = field(default_factory=lambda: [8])
    beta_list: list = field(default_factory=lambda: [0.5])
    h_list: list = field(default_factory=lambda: [0.5])
    ensemble_size: int = 200
    engine: str = "auto"
    mcmc_sweeps: int = 4000
    mcmc_burn_in: int = 400
    mcmc_ladder: list | None = None
    seed: int = 0
    checks: list = field(default_factory=lambda: ["fkg"])
    out: str = "results"
    order: int = 64
    block_m: int = 2
    h_grid: list | None = None

    @classmethod
    def from_dict(cls, raw: dict) -> "ExperimentConfig":
        known = {f.name for f in fields(cls)}
        for key in raw:
            if key not in known:
                raise ValueError(f"unknown config key: {key!r}")
        merged = dict(_CONFIG_DEFAULTS)
        merged.update(raw)
        cfg = cls(**merged)
        cfg._validate()
        return cfg

    @classmethod
    def from_file(cls, path: str) -> "ExperimentConfig":
        with open(path) as fh:
            raw = json.load(fh)
        if not isinstance(raw, dict):
            raise ValueError("config must be a flat JSON object")
        return cls.from_dict(raw)

    def _validate(self) -> None:
        if self.d < 1:
            raise ValueError("d must be >= 1")
        if not self.n_list or any(int(n) < 1 for n in self.n_list):
            raise ValueError("n_list must contain sides >= 1")
        for h in self.h_list:
            if h <= 0:
                raise ValueError("h must be > 0")
        for b in self.beta_list:
            if b <= 0:
                raise ValueError("beta must be > 0")
        if self.ensemble_size < 1:
            raise ValueError("ensemble_size must be >= 1")
        if self.engine not in ("auto", "exact", "transfer", "mcmc"):
            raise ValueError(f"unknown engine: {self.engine!r}")
        if self.mcmc_ladder is not None and any(b <= 0 for b in self.mcmc_ladder):
            raise ValueError("mcmc_ladder entries must be > 0")
        for c in self.checks:
            if c not in _CHECK_NAMES:
                raise ValueError(f"unknown check: {c!r}")

    def effective_dict(self) -> dict:
        return {f.name: getattr(self, f.name) for f in fields(self)}

    def config_hash(self) -> str:
        payload = self.effective_dict()
        payload.pop("out", None)  # output location must not split report groups
        text = json.dumps(payload, sort_keys=True)
        return hashlib.sha256(text.encode()).hexdigest()[:12]


def _to_jsonable(obj):
    if isinstance(obj, dict):
        return {str(k): _to_jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_to_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return [_to_jsonable(v) for v in obj.tolist()]
    if isinstance(obj, (np.floating, float)):
        v = float(obj)
        return None if math.isnan(v) or math.isinf(v) else v
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def _cell_seed(master_seed: int, key: str) -> int:
    digest = hashlib.sha256(f"{master_seed}|{key}".encode()).digest()
    return int.from_bytes(digest[:8], "big") >> 1


def _base_cfg(config: ExperimentConfig, n: int, beta: float, h: float, seed: int) -> dict:
    return {
        "d": config.d,
        "n": int(n),
        "beta": float(beta),
        "h": float(h),
        "ensemble": config.ensemble_size,
        "seed": seed,
        "engine": config.engine,
        "order": config.order,
        "mcmc_sweeps": config.mcmc_sweeps,
        "mcmc_burn_in": config.mcmc_burn_in,
        "mcmc_ladder": tuple(config.mcmc_ladder or ()),
    }


def _expand_units(config: ExperimentConfig, want_checks: bool, want_sweep: bool) -> list:
    units = []
    chash = config.config_hash()

    def add(kind, key, **payload):
        units.append({"kind": kind, "key": key, "config_hash": chash, **payload})

    if want_checks:
        for check in config.checks:
            if check == "hermite_basis":
                key = f"check={check}|seed={config.seed}"
                add("check", key, check=check,
                    cfg=_base_cfg(config, 2, config.beta_list[0], config.h_list[0],
                                  _cell_seed(config.seed, key)),
                    extra={})
                continue
            for beta in config.beta_list:
                for h in config.h_list:
                    if check in _TREND_CHECKS:
                        key = f"check={check}|d={config.d}|beta={beta!r}|h={h!r}|seed={config.seed}"
                        add("check", key, check=check,
                            cfg=_base_cfg(config, max(config.n_list), beta, h,
                                          _cell_seed(config.seed, key)),
                            extra={"n_list": [int(n) for n in config.n_list]})
                        continue
                    for n in config.n_list:
                        key = (
                            f"check={check}|d={config.d}|n={n}|beta={beta!r}"
                            f"|h={h!r}|seed={config.seed}"
                        )
                        cfg = _base_cfg(config, n, beta, h, _cell_seed(config.seed, key))
                        if check == "convexity":
                            grid = config.h_grid or [0.8 * h, h, 1.2 * h]
                            extra = {"h_grid": [float(x) for x in grid]}
                        elif check == "block_decomposition":
                            # config n is the block side; total side is n * block_m
                            extra = {"n_block": int(n), "m": config.block_m}
                        elif check == "gg_identity_r12":
                            extra = {"k": 2, "f_choice": "R12"}
                        elif check == "gg_identity_r23":
                            extra = {"k": 3, "f_choice": "R23"}
                        else:
                            extra = {}
                        add("check", key, check=check, cfg=cfg, extra=extra)
    if want_sweep:
        for beta in config.beta_list:
            for h in config.h_list:
                for n in config.n_list:
                    key = (
                        f"sweep|d={config.d}|n={n}|beta={beta!r}"
                        f"|h={h!r}|seed={config.seed}"
                    )
                    add("sweep", key, cfg=_base_cfg(config, n, beta, h,
                                                    _cell_seed(config.seed, key)))
    return units


_CHECK_DISPATCH = {
    "fkg": V.check_fkg,
    "free_energy_variance": V.check_free_energy_variance,
    "overlap_variance": V.check_overlap_variance,
    "covariance_square_sum": V.check_covariance_square_sum,
    "field_energy_identity": V.check_field_energy_identity,
    "gg_identity_r12": V.check_gg_identity,
    "gg_identity_r23": V.check_gg_identity,
    "gg_trend": V.check_gg_trend,
    "convexity": V.check_convexity,
    "block_decomposition": V.check_block_decomposition,
    "hermite_basis": V.check_hermite_basis,
    "fourth_derivative_bound": V.check_fourth_derivative_bound,
    "field_energy_concentration": V.check_field_energy_concentration,
    "concentration": V.concentration_experiment,
}

_TREND_KW = {"gg_trend": "n_list", "field_energy_concentration": "n_list", "concentration": "n_list"}


def _execute_unit(unit: dict) -> list:
    """Run one work unit and return its rows (all plain JSON-serializable)."""
    rows = []
    if unit["kind"] == "check":
        cfg = V.CheckConfig(**unit["cfg"])
        fn = _CHECK_DISPATCH[unit["check"]]
        try:
            report = fn(cfg, **unit["extra"])
        except CapacityError as exc:
            rows.append(
                {
                    "unit": unit["key"],
                    "type": "check_error",
                    "config_hash": unit["config_hash"],
                    "error": str(exc),
                }
            )
            return rows
        rows.append(
            {
                "unit": unit["key"],
                "type": "check",
                "config_hash": unit["config_hash"],
                "report": report.to_json(),
                "details": _to_jsonable(report.details),
                "warning": report.warning,
            }
        )
    elif unit["kind"] == "sweep":
        cfg = V.CheckConfig(**unit["cfg"])
        try:
            scal = V.ensemble_scalars(cfg)
        except CapacityError as exc:
            rows.append(
                {
                    "unit": unit["key"],
                    "type": "check_error",
                    "config_hash": unit["config_hash"],
                    "error": str(exc),
                }
            )
            return rows
        cell = {"d": cfg.d, "n": cfg.n, "beta": cfg.beta, "h": cfg.h}
        for rid in range(cfg.ensemble):
            rows.append(
                {
                    "unit": unit["key"],
                    "type": "observable",
                    "config_hash": unit["config_hash"],
                    "cell": cell,
                    "realization_id": rid,
                    "values": _to_jsonable(
                        {
                            "F": scal["F"][rid],
                            "psi": scal["psi"][rid],
                            "r12": scal["r12"][rid],
                            "r12_sq": scal["r12_sq"][rid],
                            "r12_r13": scal["r12_r13"][rid],
                            "hn": scal["hn"][rid],
                            "hn_var": scal["hn_var"][rid],
                        }
                    ),
                }
            )
        r12 = scal["r12"]
        r12_sq = scal["r12_sq"]
        nreal = len(r12)
        mean_r12 = float(r12.mean())
        var_r12 = float(r12_sq.mean()) - mean_r12**2
        psi_inf = r12_sq - 2.0 * mean_r12 * r12
        rows.append(
            {
                "unit": unit["key"],
                "type": "aggregate",
                "config_hash": unit["config_hash"],
                "cell": cell,
                "values": _to_jsonable(
                    {
                        "mean_r12": mean_r12,
                        "se_r12": float(r12.std(ddof=1)) / math.sqrt(nreal) if nreal > 1 else 0.0,
                        "mean_r12_sq": float(r12_sq.mean()),
                        "var_r12": var_r12,
                        "se_var": float(np.std(psi_inf, ddof=1)) / math.sqrt(nreal)
                        if nreal > 1
                        else 0.0,
                        "mean_hn": float(scal["hn"].mean()),
                        "engine": scal["engine"],
                    }
                ),
            }
        )
    else:
        raise ValueError(f"unknown unit kind {unit['kind']!r}")
    return rows


def _load_rows(path: str):
    """Parse a JSONL results file; returns (rows, bad_line_count)."""
    rows = []
    bad = 0
    if not os.path.exists(path):
        return rows, bad
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            try:
                rows.append(json.loads(line))
            except json.JSONDecodeError:
                bad += 1
    return rows, bad


def _completed_units(rows) -> set:
    return {r["unit"] for r in rows if r.get("type") == "done"}


def _sound_prefix(rows) -> list:
    """Rows through the last unit-completion marker.

    Units are appended sequentially and each ends with a marker, so anything
    after the final marker belongs to a unit that was interrupted mid-write
    and must be redone from scratch.
    """
    last = -1
    for i, r in enumerate(rows):
        if r.get("type") == "done":
            last = i
    return rows[: last + 1]


def _summarize(rows) -> tuple[str, int]:
    """Human-readable summary and the exit code (0 iff no hard failures)."""
    lines = []
    failures = 0
    for r in rows:
        if r.get("type") == "check":
            rep = r["report"]
            status = "PASS" if rep["pass"] else "FAIL"
            if r.get("warning"):
                status = "WARN" if rep["pass"] else "FAIL"
            if not rep["pass"]:
                failures += 1
            lines.append(
                f"{status:4s} {rep['check']:28s} d={rep['d']} n={rep['n']} "
                f"beta={rep['beta']:g} h={rep['h']:g} lhs={rep['lhs']:.6g} "
                f"rhs={rep['rhs']:.6g} slack={rep['slack']:.3g} mode={rep['mode']}"
            )
            if r.get("warning"):
                lines.append(f"     note: {r['warning']}")
        elif r.get("type") == "check_error":
            lines.append(f"WARN {r['unit']}: {r['error']}")
    n_checks = sum(1 for r in rows if r.get("type") == "check")
    n_obs = sum(1 for r in rows if r.get("type") == "observable")
    lines.append(f"checks: {n_checks} ({failures} failed); observable rows: {n_obs}")
    return "\n".join(lines) + "\n", (0 if failures == 0 else 1)


def _run_units(units, results_path: str, resume: bool, workers: int) -> None:
    existing_rows, bad = _load_rows(results_path)
    if os.path.exists(results_path) and not resume and existing_rows:
        raise RuntimeError(
            f"{results_path} already has records; pass --resume to continue it"
        )
    prefix = _sound_prefix(existing_rows)
    if bad or len(prefix) != len(existing_rows):
        # drop a torn tail line and any rows of an interrupted unit
        with open(results_path, "w") as fh:
            for r in prefix:
                fh.write(json.dumps(r, sort_keys=True) + "\n")
    done = _completed_units(prefix)
    pending = [u for u in units if u["key"] not in done]

    def write_unit(fh, unit, rows):
        for row in rows:
            fh.write(json.dumps(row, sort_keys=True) + "\n")
        fh.write(json.dumps({"type": "done", "unit": unit["key"]}, sort_keys=True) + "\n")
        fh.flush()

    with open(results_path, "a") as fh:
        if workers > 1 and len(pending) > 1:
            with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as pool:
                for unit, rows in zip(pending, pool.map(_execute_unit, pending)):
                    write_unit(fh, unit, rows)
        else:
            for unit in pending:
                write_unit(fh, unit, _execute_unit(unit))


def _cmd_run(args, want_checks: bool, want_sweep: bool) -> int:
    config = ExperimentConfig.from_file(args.config)
    if args.seed is not None:
        config.seed = args.seed
    if args.out is not None:
        config.out = args.out
    os.makedirs(config.out, exist_ok=True)
    results_path = os.path.join(config.out, "results.jsonl")
    units = _expand_units(config, want_checks, want_sweep)
    _run_units(units, results_path, args.resume, args.workers)
    rows, _ = _load_rows(results_path)
    summary, code = _summarize(rows)
    with open(os.path.join(config.out, "summary.txt"), "w") as fh:
        fh.write(summary)
    sys.stdout.write(summary)
    return code


def _write_csv(path: str, header: list, rows: list) -> None:
    with open(path, "w") as fh:
        fh.write(",".join(header) + "\n")
        for row in rows:
            fh.write(",".join(str(v) for v in row) + "\n")


def _cmd_report(args) -> int:
    results_path = os.path.join(args.results_dir, "results.jsonl")
    rows, bad = _load_rows(results_path)
    if bad:
        sys.stderr.write(f"warning: {bad} corrupt record line(s) skipped\n")
    if not rows:
        sys.stderr.write("no records found\n")
        return 1
    out_dir = args.out or os.path.join(args.results_dir, "report")
    os.makedirs(out_dir, exist_ok=True)
    by_hash = {}
    for r in rows:
        if "config_hash" in r:
            by_hash.setdefault(r["config_hash"], []).append(r)
    for chash, group in sorted(by_hash.items()):
        sys.stdout.write(f"== config {chash} ==\n")
        summary, _ = _summarize(group)
        sys.stdout.write(summary)
        conc_rows = []
        gg_rows = []
        agg_rows = []
        for r in group:
            if r.get("type") == "check" and r["report"]["check"] == "concentration":
                for t in r.get("details", {}).get("table", []):
                    conc_rows.append(
                        [t["n"], t["mean_r12"], t["conc_var"], t["se_conc"]]
                    )
            if r.get("type") == "check" and r["report"]["check"] == "gg_trend":
                for t in r.get("details", {}).get("table", []):
                    gg_rows.append([t["n"], t["gg1"], t["se1"], t["gg2"], t["se2"]])
            if r.get("type") == "aggregate":
                c = r["cell"]
                v = r["values"]
                agg_rows.append(
                    [c["n"], c["beta"], c["h"], v["mean_r12"], v["se_r12"],
                     v["var_r12"], v["se_var"]]
                )
        if not conc_rows and agg_rows:
            # fall back to sweep aggregates for the concentration series
            conc_rows = [[a[0], a[3], a[5], a[6]] for a in agg_rows]
        if conc_rows:
            _write_csv(
                os.path.join(out_dir, f"concentration_{chash}.csv"),
                ["n", "mean_r12", "var_r12", "se"],
                conc_rows,
            )
        if gg_rows:
            _write_csv(
                os.path.join(out_dir, f"gg_residuals_{chash}.csv"),
                ["n", "gg1", "se1", "gg2", "se2"],
                gg_rows,
            )
        if agg_rows:
            _write_csv(
                os.path.join(out_dir, f"overlaps_{chash}.csv"),
                ["n", "beta", "h", "mean_r12", "se_r12", "var_r12", "se_var"],
                agg_rows,
            )
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="rfimlab",
        description="Exact and Monte Carlo laboratory for a lattice model with Gaussian random fields",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def add_run_like(name, help_text):
        p = sub.add_parser(name, help=help_text)
        p.add_argument("config", help="path to a flat JSON config")
        p.add_argument("--seed", type=int, default=None, help="override master seed")
        p.add_argument("--workers", type=int, default=1, help="worker processes")
        p.add_argument("--out", default=None, help="override output directory")
        p.add_argument("--resume", action="store_true", help="continue an interrupted run")
        return p

    add_run_like("run", "run all configured checks and observable sweeps")
    add_run_like("verify", "run the configured checks only")
    add_run_like("sweep", "run the observable sweeps only")
    pr = sub.add_parser("report", help="emit tables and plot-ready CSVs from results")
    pr.add_argument("results_dir", help="directory holding results.jsonl")
    pr.add_argument("--out", default=None, help="directory for CSV output")

    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            return _cmd_run(args, want_checks=True, want_sweep=True)
        if args.command == "verify":
            return _cmd_run(args, want_checks=True, want_sweep=False)
        if args.command == "sweep":
            return _cmd_run(args, want_checks=False, want_sweep=True)
        if args.command == "report":
            return _cmd_report(args)
    except (ValueError, RuntimeError, OSError) as exc:
        sys.stderr.write(f"error: {exc}\n")
        return 2
    return 2


if __name__ == "__main__":
    sys.exit(main())
