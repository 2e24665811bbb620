"""
Command-line entry point: run one waveform design experiment from a TOML config.

    python -m cmwave --config experiments/01_desk_convergence.toml --seed 3

Outputs land in the configured directory:

    trace.csv          one row per iteration, flushed every 100 rows; agd adds gamma
    phases.csv         N rows x M phases in radians
    waveform.csv       N rows x M complex entries written as re+imj
    beampattern.csv    theta_deg,power,power_db
    correlation.csv    theta_i,theta_j,lag,re,im,level_db
    summary.json       stop reason, final objective parts, stationarity gap, constants, config echo
    audit.csv          per-iteration convergence audit (when enabled)

Exit codes: 0 success, 1 configuration error, 2 any other failure.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import os
from pathlib import Path
from typing import Any, Dict, Optional, Sequence

import numpy as np
from dotenv import load_dotenv

from .config import RunConfig, parse_config
from .exceptions import ConfigError, WaveformDesignError
from .metrics import beampattern_trace, normalized_correlation_db, objective_decomposition, stationarity_gap
from .model import build_scenario
from .solver import ConsensusADMM, IterationRecord, SolverResult
from .variants import solve_variant

logger = logging.getLogger(__name__)

ENV_LOG_LEVEL = "CMWAVE_LOG_LEVEL"
TRACE_FLUSH_EVERY = 100
TRACE_HEADER = ["k", "e", "pc", "objective", "alpha", "res_consensus", "res_successive"]
AUDIT_HEADER = ["k", "descent", "lower_bound", "dual_identity_max", "dual_bound_lhs", "dual_bound_rhs"]


def fmt(x: float) -> str:
    return f"{float(x):.17g}"


def fmt_complex(z: complex) -> str:
    return f"{z.real:.17g}{z.imag:+.17g}j"


def _writer(handle):
    return csv.writer(handle, lineterminator="\n")


class TraceWriter:
    """Streams IterationRecords to trace.csv."""

    def __init__(self, path: Path, with_lagrangian: bool, with_gamma: bool = False):
        self.path = path
        self.with_lagrangian = with_lagrangian
        self.with_gamma = with_gamma
        self.rows = 0
        self._handle = None
        self._csv = None

    def __enter__(self) -> "TraceWriter":
        self._handle = open(self.path, "w", newline="", encoding="utf-8")
        self._csv = _writer(self._handle)
        header = TRACE_HEADER + (["lagrangian"] if self.with_lagrangian else [])
        self._csv.writerow(header + (["gamma"] if self.with_gamma else []))
        return self

    def __exit__(self, *exc) -> None:
        self._handle.close()

    def __call__(self, solver: ConsensusADMM, record: IterationRecord) -> None:
        row = [
            str(record.k),
            fmt(record.e_value),
            fmt(record.pc_value),
            fmt(record.objective),
            fmt(record.alpha),
            fmt(record.residual_consensus),
            fmt(record.residual_successive),
        ]
        if self.with_lagrangian:
            row.append(fmt(record.lagrangian))
        if self.with_gamma:
            row.append(fmt(record.gamma))
        self._csv.writerow(row)
        self.rows += 1
        if self.rows % TRACE_FLUSH_EVERY == 0:
            self._handle.flush()


def write_phases(path: Path, phi: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        out = _writer(handle)
        for row in phi:
            out.writerow([fmt(v) for v in row])


def write_waveform(path: Path, waveform: np.ndarray) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        out = _writer(handle)
        for row in waveform:
            out.writerow([fmt_complex(z) for z in row])


def write_beampattern(path: Path, phi: np.ndarray, scenario) -> None:
    angles, power, power_db = beampattern_trace(phi, scenario)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        out = _writer(handle)
        out.writerow(["theta_deg", "power", "power_db"])
        for row in zip(angles, power, power_db):
            out.writerow([fmt(v) for v in row])


def write_correlation(path: Path, phi: np.ndarray, scenario) -> None:
    report = normalized_correlation_db(phi, scenario)
    with open(path, "w", newline="", encoding="utf-8") as handle:
        out = _writer(handle)
        out.writerow(["theta_i", "theta_j", "lag", "re", "im", "level_db"])
        for theta_i, theta_j, lag, re, im, level in report.rows():
            out.writerow([fmt(theta_i), fmt(theta_j), str(lag), fmt(re), fmt(im), fmt(level)])


def write_audit(path: Path, result: SolverResult) -> None:
    with open(path, "w", newline="", encoding="utf-8") as handle:
        out = _writer(handle)
        out.writerow(AUDIT_HEADER)
        for rec in result.audit.records:
            out.writerow(
                [str(rec.k), fmt(rec.descent), fmt(rec.lower_bound), fmt(rec.dual_identity_max), fmt(rec.dual_bound_lhs), fmt(rec.dual_bound_rhs)]
            )


def summarize(config: RunConfig, result: SolverResult, scenario) -> Dict[str, Any]:
    parts = objective_decomposition(result.alpha, result.phi, scenario)
    alpha_gap, phi_gap = stationarity_gap(result.alpha, result.phi, scenario)
    lip = result.state.lipschitz
    summary: Dict[str, Any] = {
        "stop_reason": result.stop_reason,
        "iterations": result.iterations,
        "variant": config.solver.variant,
        "seed": config.solver.rng_seed,
        "alpha": result.alpha,
        "e": parts["e"],
        "pc": parts["pc"],
        "objective": parts["total"],
        "stationarity_gap": {"alpha": alpha_gap, "phi": phi_gap},
        "rho_n": [float(r) for r in result.state.rho_n],
        "lipschitz": {"L_alpha": lip.L_alpha, "L_phi": lip.L_phi, "L_n": [float(v) for v in lip.L_n]},
        "config": config.model_dump(mode="json"),
    }
    if result.audit is not None:
        summary["audit"] = {"checked": result.audit.checked, "violations": result.audit.violations}
    return summary


def run_experiment(config: RunConfig) -> Dict[str, Any]:
    """Build the scenario, run the configured variant and write every enabled output file."""
    out_dir = Path(config.output_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    scenario = build_scenario(config.design)

    solver_cfg = config.solver
    if config.emit.lagrangian_audit and not solver_cfg.audit:
        solver_cfg = solver_cfg.model_copy(update={"audit": True})
    with_lagrangian = solver_cfg.record_lagrangian or solver_cfg.audit

    if config.emit.trace:
        with_gamma = solver_cfg.variant == "agd"
        with TraceWriter(out_dir / "trace.csv", with_lagrangian, with_gamma) as trace:
            result = solve_variant(scenario, solver_cfg, callback=trace, keep_trace=False)
    else:
        result = solve_variant(scenario, solver_cfg, keep_trace=False)

    if config.emit.waveform:
        write_phases(out_dir / "phases.csv", result.phi)
        write_waveform(out_dir / "waveform.csv", result.waveform)
    if config.emit.beampattern:
        write_beampattern(out_dir / "beampattern.csv", result.phi, scenario)
    if config.emit.correlation_report:
        write_correlation(out_dir / "correlation.csv", result.phi, scenario)
    if config.emit.lagrangian_audit and result.audit is not None:
        write_audit(out_dir / "audit.csv", result)

    summary = summarize(config, result, scenario)
    with open(out_dir / "summary.json", "w", encoding="utf-8") as handle:
        json.dump(summary, handle, indent=2)
    logger.info("wrote results to %s (%s after %d iterations)", out_dir, result.stop_reason, result.iterations)
    return summary


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="cmwave", description="Constant-modulus MIMO waveform design")
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--algorithm", choices=["admm", "sbcd", "agd"])
    parser.add_argument("--seed", type=int)
    parser.add_argument("--max-iter", type=int)
    parser.add_argument("--tol", type=float)
    parser.add_argument("--rho-mode", choices=["theory", "practical"])
    parser.add_argument("--output-dir")
    parser.add_argument("--sbcd-fraction", type=float)
    parser.add_argument("--agd-t", type=float)
    parser.add_argument("--threads", type=int)
    parser.add_argument("--audit", action="store_true", help="run the convergence audit and write audit.csv")
    parser.add_argument("--log-level", help=f"default from {ENV_LOG_LEVEL}, else INFO")
    return parser


def overrides_from_args(args: argparse.Namespace) -> Dict[str, Dict[str, Any]]:
    solver = {
        "variant": args.algorithm,
        "rng_seed": args.seed,
        "max_iterations": args.max_iter,
        "tol_residual": args.tol,
        "rho_mode": args.rho_mode,
        "sbcd_fraction": args.sbcd_fraction,
        "agd_t": args.agd_t,
        "threads": args.threads,
    }
    output: Dict[str, Any] = {"dir": args.output_dir}
    if args.audit:
        solver["audit"] = True
        output["lagrangian_audit"] = True
    return {"solver": solver, "output": output}


def main(argv: Optional[Sequence[str]] = None) -> int:
    load_dotenv()
    args = build_parser().parse_args(argv)
    level = (args.log_level or os.getenv(ENV_LOG_LEVEL) or "INFO").upper()
    logging.basicConfig(level=level, format="%(asctime)s %(levelname)s %(name)s: %(message)s")

    try:
        config = parse_config(args.config, overrides=overrides_from_args(args))
        run_experiment(config)
    except ConfigError as exc:
        logger.error("configuration error: %s", exc)
        return 1
    except (WaveformDesignError, OSError) as exc:
        logger.error("run failed: %s", exc)
        return 2
    except Exception:
        logger.exception("run failed")
        return 2
    return 0
