"""Batch front end: ``stabgibbs <command> [--config job.json] [--out DIR] [--seed S] [--threads T]``.

Commands: ``gap-scan``, ``stair-scan``, ``block-verify``, ``mix-run``, ``model-dump``.
Exit codes: 0 all embedded checks passed, 1 a check failed, 2 the job was
refused (bad config or a size beyond the desk limits).
"""
from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field, fields
from pathlib import Path

import numpy as np

from . import analysis
from .dynamics import (MixingBoundViolation, frame_ground_state, haar_pure, maximally_mixed,
                       measured_mixing_time, mixing_time_bound, mixing_trace, pair_excitation_state,
                       perturbed_mixed, worst_case_chi2)
from .models import COUPLING_SETS, GROUND_LABELS, build_model
from .serialize import SCHEMA, atomic_write, csv_text, dumps, fmt
from .spectral import loglog_slope, min_eigenvalue, stair_graph, stair_test_vector

COMMANDS = ("gap-scan", "stair-scan", "block-verify", "mix-run", "model-dump")
log = logging.getLogger("stabgibbs")

GAP_HEADER = ["model", "N", "beta", "coupling_set", "gap", "kernel_dim", "residual", "wall_time_ms"]
STAIR_HEADER = ["n", "lambda_min", "lambda_min_n2", "rayleigh_upper", "residual"]


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------
@dataclass
class JobConfig:
    """One batch job.  Every field round-trips through the JSON config file.

    ``sizes`` holds ring lengths N, torus sides L, or stair sides n depending
    on the command.  ``tolerances`` overrides entries of
    :data:`DEFAULT_TOLERANCES`.
    """

    command: str
    model: str = "ising"
    sizes: list[int] = field(default_factory=lambda: [4])
    betas: list[float] = field(default_factory=lambda: [1.0])
    couplings: str = "local_full"
    seed: int = 0
    output_dir: str = "stabgibbs_out"
    tolerances: dict = field(default_factory=dict)
    coupling_J: float = 1.0
    n_states: int = 3
    grid_points: int = 50
    horizon_gaps: float = 10.0
    mix_eps: float = 1e-3

    def __post_init__(self):
        if self.command not in COMMANDS:
            raise ValueError(f"command must be one of {COMMANDS}")
        if self.model not in ("ising", "toric"):
            raise ValueError("model must be 'ising' or 'toric'")
        if self.couplings not in COUPLING_SETS:
            raise ValueError(f"couplings must be one of {COUPLING_SETS}")
        self.sizes = [int(s) for s in self.sizes]
        self.betas = [float(b) for b in self.betas]
        unknown = set(self.tolerances) - set(DEFAULT_TOLERANCES)
        if unknown:
            raise ValueError(f"unknown tolerance keys {sorted(unknown)}")

    def tol(self, key: str) -> float:
        return float(self.tolerances.get(key, DEFAULT_TOLERANCES[key]))

    def to_json_dict(self) -> dict:
        out = asdict(self)
        out["betas"] = [b if math.isfinite(b) else str(b) for b in self.betas]
        return out

    @classmethod
    def from_json_dict(cls, data: dict) -> "JobConfig":
        names = {f.name for f in fields(cls)}
        extra = set(data) - names
        if extra:
            raise ValueError(f"unknown config keys {sorted(extra)}")
        return cls(**data)

    @classmethod
    def defaults(cls, command: str) -> "JobConfig":
        presets = {
            "gap-scan": {"model": "ising", "sizes": [4], "betas": [0.0, 1.0, 2.0], "couplings": "local_full"},
            "stair-scan": {"sizes": [1, 2, 4, 8, 16, 32, 64, 128, 200]},
            "block-verify": {"model": "ising", "sizes": [4], "betas": [0.0, 1.0, 3.0]},
            "mix-run": {"model": "ising", "sizes": [3], "betas": [1.0], "couplings": "local_full"},
            "model-dump": {"model": "toric", "sizes": [2]},
        }
        return cls(command=command, **presets[command])


DEFAULT_TOLERANCES = {
    "leakage": 1e-12,
    "block_entry": 1e-11,
    "floor": 1e-10,
    "stair_rayleigh": 1e-10,
    "slope_low": -2.2,
    "slope_high": -1.8,
    "mix_rel": 1e-6,
    "rate_rel": 0.05,
    "tmix_rel": 0.05,
}


# ---------------------------------------------------------------------------
# output helpers
# ---------------------------------------------------------------------------
def _slug(x) -> str:
    return fmt(x).replace(".", "p").replace("-", "m")


@dataclass
class Outcome:
    files: list[Path]
    failures: list[str]


def _pool_map(fn, items, threads: int):
    if threads <= 1 or len(items) <= 1:
        return [fn(it) for it in items]
    with ThreadPoolExecutor(max_workers=threads) as ex:
        return list(ex.map(fn, items))


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------
def cmd_gap_scan(cfg: JobConfig, out: Path, threads: int = 1) -> Outcome:
    for s in cfg.sizes:
        analysis.check_desk_limits(cfg.model, s, cfg.couplings)
    if any(not math.isfinite(b) for b in cfg.betas):
        raise analysis.DeskLimitError("gap scans need finite beta (the master Hamiltonian is undefined at beta = inf)")
    grid = [(s, b) for s in cfg.sizes for b in cfg.betas]

    def run(point):
        s, b = point
        res = analysis.gap_point(cfg.model, s, b, cfg.couplings, cfg.coupling_J)
        row = [cfg.model, s, b, cfg.couplings, res.gap, res.kernel_dim, res.residual, res.wall_time_ms]
        path = out / "points" / f"gap_{cfg.model}_{s}_{_slug(b)}_{cfg.couplings}.json"
        atomic_write(path, dumps({"schema": SCHEMA, **dict(zip(GAP_HEADER, row)),
                                  "ambiguous_kernel": res.ambiguous_kernel, "method": res.method}))
        return row, res, path

    results = _pool_map(run, grid, threads)
    failures = []
    for row, res, _ in results:
        tag = f"{cfg.model} N={row[1]} beta={fmt(row[2])}"
        if not res.gap > 0:
            failures.append(f"{tag}: nonpositive gap (spectral gap of the sampler)")
        if cfg.couplings != "syndrome_local" and res.kernel_dim != 1:
            failures.append(f"{tag}: kernel_dim {res.kernel_dim} != 1 (primitivity)")
    rows = [r for r, _, _ in results]
    csv_path = atomic_write(out / "gap_scan.csv", csv_text(GAP_HEADER, rows))
    summary = {"schema": SCHEMA, "config": cfg.to_json_dict(), "failures": failures}
    gaps = [r[4] for r in rows]
    if len(gaps) > 1:
        summary["gap_ratio_max_min"] = max(gaps) / min(gaps) if min(gaps) > 0 else float("inf")
        if len(cfg.sizes) == 1 and len(cfg.betas) > 1:
            summary["log_gap_vs_beta_slope"] = float(np.polyfit(cfg.betas, np.log(gaps), 1)[0])
    js = atomic_write(out / "gap_scan.json", dumps(summary))
    return Outcome([csv_path, js] + [p for _, _, p in results], failures)


def stair_row(n: int) -> list:
    H = stair_graph(n).hamiltonian
    res = min_eigenvalue(H, dense_limit=256)
    lam = res.min_eigenvalue
    upper = stair_test_vector(n)[1] if n >= 2 else float("nan")
    return [n, lam, lam * n * n, upper, res.residual]


def cmd_stair_scan(cfg: JobConfig, out: Path, threads: int = 1) -> Outcome:
    if any(n < 1 or n > 1000 for n in cfg.sizes):
        raise analysis.DeskLimitError("stair scans take 1 <= n <= 1000")
    rows = _pool_map(stair_row, sorted(set(cfg.sizes)), threads)
    failures = []
    for n, lam, _, upper, _ in rows:
        if n >= 2 and lam > upper + cfg.tol("stair_rayleigh"):
            failures.append(f"n={n}: lambda_min {lam:.6g} above test-vector bound {upper:.6g} (Rayleigh bound)")
    csv_path = atomic_write(out / "stair_scan.csv", csv_text(STAIR_HEADER, rows))
    fit = [(r[0], r[1]) for r in rows if r[0] >= 8]
    summary = {"schema": SCHEMA, "config": cfg.to_json_dict(), "failures": failures}
    if len(fit) >= 2:
        slope = loglog_slope(*zip(*fit))
        summary["loglog_slope"] = slope
        summary["fit_range"] = [fit[0][0], fit[-1][0]]
        if not cfg.tol("slope_low") <= slope <= cfg.tol("slope_high"):
            failures.append(f"log-log slope {slope:.4f} outside [{cfg.tol('slope_low')}, {cfg.tol('slope_high')}] (inverse-square scaling)")
    js = atomic_write(out / "stair_scan.json", dumps(summary))
    return Outcome([csv_path, js], failures)


def cmd_block_verify(cfg: JobConfig, out: Path, threads: int = 1) -> Outcome:
    for s in cfg.sizes:
        if cfg.model == "ising" and s > analysis.ISING_MAX_BLOCKS:
            raise analysis.DeskLimitError(f"block verification limited to Ising N <= {analysis.ISING_MAX_BLOCKS}")
        if cfg.model == "toric" and s != 2:
            raise analysis.DeskLimitError("block verification for the toric code needs L = 2")
    grid = [(s, b) for s in cfg.sizes for b in cfg.betas]
    tol, leak = cfg.tol("block_entry"), cfg.tol("leakage")

    def run(point):
        s, b = point
        if cfg.model == "ising":
            return analysis.ising_block_report(s, b, tol, leak)
        return analysis.toric_block_report(b, tol, leak)

    reports = _pool_map(run, grid, threads)
    failures = []
    for rep in reports:
        size = rep.get("N", rep.get("L"))
        failures += [f"{rep['model']} size={size} beta={fmt(rep['beta'])}: {f}" for f in rep["failures"]]
    js = atomic_write(out / "block_verify.json",
                      dumps({"schema": SCHEMA, "config": cfg.to_json_dict(), "reports": reports, "failures": failures}))
    return Outcome([js], failures)


def _initial_states(cfg: JobConfig, g, rng: np.random.Generator):
    d = g.dim
    if cfg.model == "toric":
        states = [frame_ground_state(g, lab) for lab in GROUND_LABELS]
        lat = g.model.lattice
        states.append(pair_excitation_state(g, "electric", lat.leaf_path_spins[0]))
        states.append(maximally_mixed(d))
        return states
    states = [perturbed_mixed(d, rng)]
    states += [haar_pure(d, rng) for _ in range(cfg.n_states)]
    return states


def cmd_mix_run(cfg: JobConfig, out: Path, threads: int = 1) -> Outcome:
    for s in cfg.sizes:
        route = analysis.check_desk_limits(cfg.model, s, cfg.couplings)
        if route != "full":
            raise analysis.DeskLimitError("mixing runs need the full generator (Ising N <= 8, toric L = 2)")
    if any(not math.isfinite(b) for b in cfg.betas):
        raise analysis.DeskLimitError("mixing runs need finite beta (chi^2 needs a full-rank Gibbs state)")
    grid = [(s, b) for s in cfg.sizes for b in cfg.betas]

    def run(point):
        s, b = point
        rng = np.random.default_rng([cfg.seed, s, int(round(b * 1000))])
        model = build_model(cfg.model, s, cfg.coupling_J)
        g, L = analysis.build_generator(model, b, cfg.couplings)
        gap = analysis.master_gap(g, L).gap
        Ls = L.schrodinger()
        times = np.linspace(0.0, cfg.horizon_gaps / gap, cfg.grid_points)
        rows, files, fails = [], [], []
        for k, rho0 in enumerate(_initial_states(cfg, g, rng)):
            meta = {"model": cfg.model, "size": s, "couplings": cfg.couplings, "seed": cfg.seed}
            try:
                tr = mixing_trace(Ls, rho0, g, times, gap, rel_slack=cfg.tol("mix_rel"), metadata=meta)
            except MixingBoundViolation as exc:
                fails.append(f"{cfg.model} size={s} beta={fmt(b)} state={rho0.label}: {exc} (chi^2 decay bound)")
                continue
            stem = f"trace_{cfg.model}_{s}_{_slug(b)}_{k:02d}_{rho0.label}"
            files += list(tr.write(out / "traces" / f"{stem}.csv"))
            c0 = tr.metadata["chi2_0"]
            bound = mixing_time_bound(c0, gap, cfg.mix_eps) if c0 > 0 else 0.0
            measured = measured_mixing_time(tr, cfg.mix_eps)
            rate_ok = not c0 > 0 or not math.isfinite(tr.fitted_rate) or \
                tr.fitted_rate >= 2 * gap * (1 - cfg.tol("rate_rel"))
            tmix_ok = not math.isfinite(measured) or measured <= bound * (1 + cfg.tol("tmix_rel")) or c0 == 0
            if not rate_ok:
                fails.append(f"{stem}: fitted rate {tr.fitted_rate:.6g} below 2*gap {2 * gap:.6g} (decay rate)")
            if not tmix_ok:
                fails.append(f"{stem}: measured t_mix {measured:.6g} above bound {bound:.6g} (mixing-time bound)")
            rows.append({"state": rho0.label, "index": k, "beta": b, "size": s, "gap": gap,
                         "two_gap": 2 * gap, "fitted_rate": tr.fitted_rate, "chi2_0": c0,
                         "chi2_worst_case": worst_case_chi2(g), "tmix_bound": bound,
                         "tmix_bound_worst_case": mixing_time_bound(worst_case_chi2(g), gap, cfg.mix_eps),
                         "tmix_measured": measured, "final_trace_dist": float(tr.trace_dist[-1]),
                         "min_state_eigenvalue": tr.min_state_eigenvalue})
        return rows, files, fails

    results = _pool_map(run, grid, threads)
    rows = [r for res in results for r in res[0]]
    files = [f for res in results for f in res[1]]
    failures = [f for res in results for f in res[2]]
    js = atomic_write(out / "mix_summary.json",
                      dumps({"schema": SCHEMA, "config": cfg.to_json_dict(), "runs": rows, "failures": failures}))
    return Outcome(files + [js], failures)


def model_dump_dict(kind: str, size: int, J: float = 1.0) -> dict:
    model = build_model(kind, size, J)
    geo = model.lattice.to_json_dict()
    geo["stabilizers"] = [{"coef": c, "support": list(s.support), "label": s.label()} for c, s in model.terms]
    geo["logical_operators"] = {k: {"support": list(p.support), "label": p.label()} for k, p in model.logicals.items()}
    if kind == "toric":
        geo["n_stars"] = len(geo["stars"])
        geo["n_plaquettes"] = len(geo["plaquettes"])
        geo["n_edges"] = len(geo["edges"])
        geo["leaf_path_count"] = len(geo["leaf_paths"])
        geo["constraints"] = model.lattice.constraint_report()
    else:
        geo["n_bonds"] = len(geo["bonds"])
    return {"schema": SCHEMA, "model": kind, "size": size, "geometry": geo}


def cmd_model_dump(cfg: JobConfig, out: Path, threads: int = 1) -> Outcome:
    files, failures = [], []
    for s in cfg.sizes:
        data = model_dump_dict(cfg.model, s, cfg.coupling_J)
        cons = data["geometry"].get("constraints", {})
        failures += [f"toric L={s}: layout constraint {k} fails (snake/comb layout)" for k, v in cons.items() if not v]
        files.append(atomic_write(out / f"model_{cfg.model}_{s}.json", dumps(data)))
    return Outcome(files, failures)


HANDLERS = {
    "gap-scan": cmd_gap_scan,
    "stair-scan": cmd_stair_scan,
    "block-verify": cmd_block_verify,
    "mix-run": cmd_mix_run,
    "model-dump": cmd_model_dump,
}


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------
def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="stabgibbs", description="Davies samplers for stabilizer Hamiltonians.")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        s = sub.add_parser(name)
        s.add_argument("--config", type=Path, help="JSON job file (JobConfig fields)")
        s.add_argument("--out", type=Path, help="output directory (overrides output_dir)")
        s.add_argument("--seed", type=int)
        s.add_argument("--threads", type=int, help="worker threads (fallback: STABGIBBS_THREADS, then 1)")
        s.add_argument("--model", choices=["ising", "toric"])
        s.add_argument("--sizes", type=int, nargs="+")
        s.add_argument("--betas", type=float, nargs="+")
        s.add_argument("--couplings", choices=COUPLING_SETS)
    return p


def load_config(args) -> JobConfig:
    if args.config is not None:
        data = json.loads(Path(args.config).read_text())
        data.setdefault("command", args.command)
        if data["command"] != args.command:
            raise ValueError(f"config is for {data['command']!r}, not {args.command!r}")
        # file fields layer over the per-command presets
        base = JobConfig.defaults(args.command).to_json_dict()
        base.update(data)
        cfg = JobConfig.from_json_dict(base)
    else:
        cfg = JobConfig.defaults(args.command)
    for key in ("model", "sizes", "betas", "couplings", "seed"):
        val = getattr(args, key)
        if val is not None:
            setattr(cfg, key, val)
    if args.out is not None:
        cfg.output_dir = str(args.out)
    cfg.__post_init__()
    return cfg


def resolve_threads(arg: int | None) -> int:
    if arg is not None:
        return max(1, arg)
    env = os.environ.get("STABGIBBS_THREADS")
    return max(1, int(env)) if env else 1


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(message)s")
    try:
        cfg = load_config(args)
        out = Path(cfg.output_dir)
        t0 = time.perf_counter()
        outcome = HANDLERS[cfg.command](cfg, out, resolve_threads(args.threads))
    except (analysis.DeskLimitError, ValueError, json.JSONDecodeError, OSError) as exc:
        print(f"stabgibbs: refused: {exc}", file=sys.stderr)
        return 2
    log.info("%s finished in %.1f s", cfg.command, time.perf_counter() - t0)
    for f in outcome.files:
        log.info("wrote %s", f)
    if outcome.failures:
        for f in outcome.failures:
            print(f"FAIL {f}", file=sys.stderr)
        return 1
    print(f"{cfg.command}: ok ({len(outcome.files)} files in {out})")
    return 0


if __name__ == "__main__":
    sys.exit(main())
