"""Experiment runner: config validation, orchestration, report emission.

One experiment per invocation: `fracmono <kind> --config cfg.json --out dir`.
Every run writes summary.json (scalars, verdicts, and the fully resolved
config for provenance) plus CSV detail tables and, unless disabled, PNG
figures rendered from the same data. Failures write error.json with the
error type preserved and exit nonzero.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
from pathlib import Path

import numpy as np

from .errors import ConfigError, FracmonoError
from . import report
from .fracops import GridSpec, assemble_operator, mask_from_region, mask_union, uniform_partition
from .forward import (
    Potential,
    assemble_dtn,
    dtn_difference,
    neumann_trace,
    solve_dirichlet,
    stiffness,
)
from .inversion import (
    DetectionConfig,
    ball_dictionary,
    closed_set_dictionary,
    converse_check,
    detect_definite,
    detect_indefinite,
    linearized_converse_check,
    localized_potential,
    monotonicity_gap,
    reconstruct_monotone,
    simultaneous_localized_potential,
)
from .stability import build_ladder, dimension_bounds, estimate_constant, witness_data, witness_potentials, witness_sets

KINDS = (
    "forward",
    "dtn",
    "mono-check",
    "locpot",
    "detect-definite",
    "detect-indefinite",
    "reconstruct",
    "stability",
    "converse-check",
)

RANDOMIZED_KINDS = ("mono-check", "stability")


# ---------------------------------------------------------------------------
# Config validation and parsing


def _fail(path, msg):
    raise ConfigError(f"config.{path}: {msg}")


def validate_config(cfg: dict) -> dict:
    """Structural validation; returns the config with defaults filled in."""
    if not isinstance(cfg, dict):
        raise ConfigError("config: top level must be an object")
    for key in ("grid", "s", "experiment"):
        if key not in cfg:
            _fail(key, "missing required key")
    grid = cfg["grid"]
    if not isinstance(grid, dict):
        _fail("grid", "must be an object")
    for key in ("dim", "omega_box", "h"):
        if key not in grid:
            _fail(f"grid.{key}", "missing required key")
    if grid["dim"] not in (1, 2):
        _fail("grid.dim", "must be 1 or 2")
    box = grid["omega_box"]
    if not isinstance(box, list) or len(box) != grid["dim"]:
        _fail("grid.omega_box", "must list one (lo, hi) pair per axis")
    for pair in box:
        if not (isinstance(pair, list) and len(pair) == 2 and pair[1] > pair[0]):
            _fail("grid.omega_box", "each pair must satisfy hi > lo")
    if not (isinstance(grid["h"], (int, float)) and grid["h"] > 0):
        _fail("grid.h", "must be positive")
    if "collar_width" not in grid:
        grid = dict(grid)
        grid["collar_width"] = float(box[0][1] - box[0][0])
        cfg = dict(cfg)
        cfg["grid"] = grid
    elif grid["collar_width"] <= 0:
        _fail("grid.collar_width", "must be positive")

    s = cfg["s"]
    if not (isinstance(s, (int, float)) and 0 < s < 1):
        _fail("s", "must lie strictly between 0 and 1")

    exp = cfg["experiment"]
    if not isinstance(exp, dict) or "kind" not in exp:
        _fail("experiment.kind", "missing required key")
    if exp["kind"] not in KINDS:
        _fail("experiment.kind", f"unknown kind {exp['kind']!r}; expected one of {', '.join(KINDS)}")
    if exp["kind"] in RANDOMIZED_KINDS and "seed" not in cfg:
        _fail("seed", f"required for randomized kind {exp['kind']!r}")

    for name in ("tol", "bisect_tol", "alpha0"):
        if name in exp and not (isinstance(exp[name], (int, float)) and exp[name] > 0):
            _fail(f"experiment.{name}", "must be positive")

    out = dict(cfg.get("output", {}))
    out.setdefault("figures", True)
    out.setdefault("dump_matrices", False)
    cfg = dict(cfg)
    cfg.setdefault("scheme", "spectral-power")
    cfg["output"] = out
    return cfg


def _parse_potential(grid: GridSpec, spec, label="potential") -> Potential:
    if isinstance(spec, (int, float)):
        return Potential.constant(grid, float(spec))
    if not isinstance(spec, dict):
        _fail(label, "must be a number or an object")
    if "constant" in spec:
        return Potential.constant(grid, float(spec["constant"]))
    if "phantom" in spec:
        part = uniform_partition(grid, spec["cells"])
        background = float(spec.get("background", 0.0))
        vals = np.full(part.n_cells, background)
        if spec["phantom"] == "block":
            i0, i1 = spec["block"]
            vals[i0 : i1 + 1] = background + float(spec.get("contrast", 1.0))
        elif spec["phantom"] == "two-block":
            for cell, contrast in zip(spec["blocks"], spec["contrasts"]):
                vals[cell] = background + float(contrast)
        else:
            _fail(label, f"unknown phantom {spec['phantom']!r}")
        return Potential.from_cells(part, vals, partition_id=str(spec["phantom"]))
    if "cells" in spec:
        part = uniform_partition(grid, spec["cells"])
        return Potential.from_cells(part, spec["values"])
    if "values" in spec:
        vals = np.asarray(spec["values"], dtype=float)
        if vals.shape != (grid.n_I,):
            _fail(label, f"values must have length n_I = {grid.n_I}")
        return Potential(values=vals)
    _fail(label, "unrecognized potential specification")


def _parse_exterior(grid: GridSpec, spec, rng, label="g") -> np.ndarray:
    if spec is None:
        _fail(label, "missing exterior data specification")
    if "basis_index" in spec:
        i = int(spec["basis_index"])
        if not 0 <= i < grid.n_E:
            _fail(label, f"basis_index out of range [0, {grid.n_E})")
        g = np.zeros(grid.n_E)
        g[i] = 1.0
        return g
    if "values" in spec:
        g = np.asarray(spec["values"], dtype=float)
        if g.shape != (grid.n_E,):
            _fail(label, f"values must have length n_E = {grid.n_E}")
        return g
    if spec.get("random"):
        if rng is None:
            _fail("seed", "required for random exterior data")
        return rng.standard_normal(grid.n_E)
    _fail(label, "unrecognized exterior data specification")


class _Env:
    """Shared state for one experiment run."""

    def __init__(self, cfg: dict, out_dir: Path):
        self.cfg = cfg
        self.out = out_dir
        g = cfg["grid"]
        self.grid = GridSpec(
            dim=g["dim"],
            omega_box=g["omega_box"],
            collar_width=float(g["collar_width"]),
            h=float(g["h"]),
        )
        self.op = assemble_operator(self.grid, float(cfg["s"]), cfg["scheme"])
        self.rng = np.random.default_rng(cfg["seed"]) if "seed" in cfg else None
        self.figures = bool(cfg["output"]["figures"])
        self.dump = bool(cfg["output"]["dump_matrices"])

    def path(self, name: str) -> Path:
        return self.out / name


# ---------------------------------------------------------------------------
# Experiment runners (each returns the results dict for summary.json)


def _run_forward(env: _Env) -> dict:
    exp = env.cfg["experiment"]
    q = _parse_potential(env.grid, exp.get("potential", 0.0))
    g = _parse_exterior(env.grid, exp.get("g"), env.rng)
    f = None
    if "f" in exp:
        f = np.asarray(exp["f"], dtype=float)
    u = solve_dirichlet(env.op, q, g, f)
    k_q = stiffness(env.op, q)
    rhs = env.op.m * (f if f is not None else np.zeros(env.grid.n_I)) - env.op.L_IE @ g
    resid = np.linalg.norm(k_q @ u[env.op.I] - rhs)
    scale = np.linalg.norm(k_q) * np.linalg.norm(u[env.op.I]) + np.linalg.norm(rhs)
    trace = neumann_trace(env.op, u)

    interior_flag = np.zeros(env.grid.n_nodes, dtype=bool)
    interior_flag[env.op.I] = True
    rows = []
    for idx in range(env.grid.n_nodes):
        kind = "I" if interior_flag[idx] else "E"
        rows.append([idx, kind] + [f"{c!r}" for c in env.grid.nodes[idx]] + [repr(u[idx])])
    report.write_csv(env.path("solution.csv"), ["node", "region"] + [f"x{i}" for i in range(env.grid.dim)] + ["u"], rows)
    report.write_csv(env.path("neumann.csv"), ["exterior_node", "trace"],
                     [[int(e), repr(v)] for e, v in zip(env.op.E, trace)])
    if env.figures:
        report.fig_solution(env.path("solution.png"), env.grid, u, title="forward solution")
    return {
        "residual": resid,
        "residual_relative": resid / scale if scale > 0 else 0.0,
        "solution_sup": float(np.max(np.abs(u))),
    }


def _run_dtn(env: _Env) -> dict:
    exp = env.cfg["experiment"]
    q = _parse_potential(env.grid, exp.get("potential", 0.0))
    dtn = assemble_dtn(env.op, q)
    evals = np.linalg.eigvalsh(dtn.matrix)
    report.write_csv(env.path("eigenvalues.csv"), ["index", "eigenvalue"],
                     [[i, repr(v)] for i, v in enumerate(evals)])
    if env.dump:
        report.write_matrix(env.path("dtn.fmono"), dtn.matrix)
    if env.figures:
        report.fig_matrix(env.path("dtn.png"), dtn.matrix, title="DtN matrix")
    results = {
        "d_q": dtn.resonance.d_q,
        "dim_nq": dtn.resonance.dim_nq,
        "coercivity_gap": dtn.resonance.gap,
        "domain_codim": dtn.codim,
        "symmetry_residual": float(np.linalg.norm(dtn.matrix - dtn.matrix.T)),
    }
    if exp.get("collar_check"):
        g2 = GridSpec(env.grid.dim, env.grid.omega_box, 1.5 * env.grid.collar_width, env.grid.h)
        op2 = assemble_operator(g2, env.op.s, env.op.scheme)
        d2 = assemble_dtn(op2, _parse_potential(g2, exp.get("potential", 0.0)))
        n_keep = min(8, env.grid.n_E, g2.n_E)
        e1 = np.sort(np.linalg.eigvalsh(dtn.matrix))[:n_keep]
        e2 = np.sort(np.linalg.eigvalsh(d2.matrix))[:n_keep]
        results["collar_sensitivity_low_eigs"] = float(np.max(np.abs(e1 - e2)))
    return results


def _run_mono_check(env: _Env) -> dict:
    exp = env.cfg["experiment"]
    count = int(exp.get("count", 50))
    amp = float(exp.get("amplitude", 1.0))
    rows = []
    worst = 0.0
    for trial in range(count):
        q1 = env.rng.uniform(-amp, amp, env.grid.n_I)
        q2 = env.rng.uniform(-amp, amp, env.grid.n_I)
        g = env.rng.standard_normal(env.grid.n_E)
        gap = monotonicity_gap(env.op, q1, q2, g)
        scale = abs(gap.lhs) + abs(gap.rhs) + 1.0
        rel = gap.identity_residual / scale
        worst = max(worst, rel)
        rows.append([trial, repr(gap.lhs), repr(gap.rhs), repr(gap.identity_residual), repr(rel)])
    report.write_csv(env.path("monotonicity.csv"),
                     ["trial", "lhs", "rhs", "identity_residual", "relative_residual"], rows)
    if env.figures:
        report.fig_residuals(env.path("monotonicity.png"),
                             [float(r[4]) for r in rows], title="identity residuals",
                             ylabel="relative residual")
    return {"trials": count, "worst_relative_residual": worst}


def _run_locpot(env: _Env) -> dict:
    exp = env.cfg["experiment"]
    q = _parse_potential(env.grid, exp.get("potential", 0.0))
    mask = mask_from_region(env.grid, exp["region"], label="target")
    if "q2" in exp:
        q2 = _parse_potential(env.grid, exp["q2"], label="q2")
        res = simultaneous_localized_potential(env.op, q, q2, mask)
        results = {"ratio": res.ratio, "ratio1": res.ratio1, "ratio2": res.ratio2}
    else:
        res = localized_potential(env.op, q, mask)
        results = {"ratio": res.ratio}
    header = ["node", "in_target"] + [f"x{i}" for i in range(env.grid.dim)] + ["u"]
    if res.u2 is not None:
        header.append("u2")
    rows = []
    for j, idx in enumerate(env.op.I):
        row = [int(idx), int(mask.flags[j])] + [repr(c) for c in env.grid.nodes[idx]] + [repr(res.u[idx])]
        if res.u2 is not None:
            row.append(repr(res.u2[idx]))
        rows.append(row)
    report.write_csv(env.path("field.csv"), header, rows)
    report.write_csv(env.path("data.csv"), ["exterior_node", "g"],
                     [[int(e), repr(v)] for e, v in zip(env.op.E, res.g)])
    if env.figures:
        report.fig_solution(env.path("field.png"), env.grid, res.u, res.u2, title="localized field")
    return results


def _detection_dictionary(env: _Env, exp: dict, mode: str):
    part = uniform_partition(env.grid, exp["cells"])
    if mode == "balls":
        return part, ball_dictionary(env.grid, part, tuple(exp.get("radii_factors", (0.5, 1.0, 1.5))))
    return part, closed_set_dictionary(part, arity=int(exp.get("arity", 1)),
                                       cap=int(exp.get("cap", 4096)))


def _run_detection(env: _Env, mode: str) -> dict:
    exp = env.cfg["experiment"]
    q0 = _parse_potential(env.grid, exp.get("reference", 0.0), label="reference")
    q = _parse_potential(env.grid, exp["target"], label="target")
    dtn_q = assemble_dtn(env.op, q)
    part, dictionary = _detection_dictionary(env, exp, "balls" if mode != "indefinite" else "cells")
    config = DetectionConfig(
        dictionary=dictionary,
        alpha0=float(exp.get("alpha0", 1e-3)),
        alpha_count=int(exp.get("alpha_count", 25)),
        tol=float(exp.get("tol", 1e-8)),
    )
    if mode == "indefinite":
        result = detect_indefinite(env.op, q0, dtn_q, config)
    else:
        result = detect_definite(env.op, q0, dtn_q, exp.get("direction", "up"), config)

    rows = [[r.candidate_id, "" if r.alpha_pass is None else repr(r.alpha_pass),
             r.neg_count_lower, r.neg_count_upper, int(r.passed)] for r in result.records]
    report.write_csv(env.path("detection.csv"),
                     ["candidate_id", "alpha_pass", "neg_count_lower", "neg_count_upper", "pass"], rows)

    truth = np.abs(q.values - q0.values) > 0
    agg = result.aggregate.flags
    mask_rows = []
    for j, idx in enumerate(env.op.I):
        mask_rows.append([int(idx)] + [repr(c) for c in env.grid.nodes[idx]]
                         + [int(agg[j]), int(truth[j])])
    report.write_csv(env.path("mask.csv"),
                     ["node"] + [f"x{i}" for i in range(env.grid.dim)] + ["in_aggregate", "in_truth"],
                     mask_rows)
    if env.figures:
        report.fig_masks(env.path("mask.png"), env.grid, agg, truth, title=f"{result.mode} detection")
    inter = int(np.count_nonzero(agg & truth))
    union = int(np.count_nonzero(agg | truth))
    return {
        "mode": result.mode,
        "candidates": len(result.records),
        "passing": sum(r.passed for r in result.records),
        "aggregate_nodes": int(agg.sum()),
        "truth_nodes": int(truth.sum()),
        "jaccard": inter / union if union else 1.0,
        "d_used": list(result.d_used),
    }


def _run_reconstruct(env: _Env) -> dict:
    exp = env.cfg["experiment"]
    part = uniform_partition(env.grid, exp["cells"])
    truth = _parse_potential(env.grid, exp["truth"], label="truth")
    observed = assemble_dtn(env.op, truth)
    bounds = tuple(exp.get("bounds", (-1.0, 1.0)))
    rec = reconstruct_monotone(env.op, observed, part, bounds,
                               bisect_tol=float(exp.get("bisect_tol", 0.01)),
                               tol=float(exp.get("tol", 1e-8)))
    truth_cells = [float(np.mean(truth.values[m.flags])) for m in part.masks]
    rows = [[c.cell_id, repr(c.lower), repr(c.upper), repr(c.midpoint), repr(t)]
            for c, t in zip(rec.cells, truth_cells)]
    report.write_csv(env.path("cells.csv"),
                     ["cell_id", "lower", "upper", "midpoint", "truth"], rows)
    if env.figures:
        report.fig_reconstruction(env.path("cells.png"), rec.cells, truth_cells)
    errors = [abs(c.midpoint - t) for c, t in zip(rec.cells, truth_cells)]
    return {
        "converged": rec.converged,
        "sweeps_lower": rec.sweeps_lower,
        "sweeps_upper": rec.sweeps_upper,
        "max_abs_error": max(errors),
        "cell_midpoints": [c.midpoint for c in rec.cells],
    }


def _run_stability(env: _Env) -> dict:
    exp = env.cfg["experiment"]
    part = uniform_partition(env.grid, exp["cells"])
    a = float(exp.get("a", 0.5))
    ladder = build_ladder(env.op, exp.get("ladder", "energy"))
    bounds = dimension_bounds(env.op, part, a, sample_count=int(exp.get("bound_samples", 32)),
                              seed=env.cfg["seed"])
    rep = estimate_constant(env.op, part, a, ladder, samples=int(exp.get("samples", 64)),
                            seed=env.cfg["seed"], bounds=bounds)
    report.write_csv(env.path("stability.csv"), ["level", "c_est"],
                     [[l + 1, repr(v)] for l, v in enumerate(rep.c_est)])
    report.write_csv(env.path("pair_ratios.csv"), ["pair_id", "level", "ratio"],
                     [[p.pair_id, l + 1, repr(p.ratios[l])] for p in rep.pairs for l in range(len(p.ratios))])
    results = {
        "c_est_full": rep.c_full,
        "k_est": rep.k_est,
        "d_bound": bounds.d,
        "n_bound": bounds.n,
        "n_trivial": bounds.n_trivial,
        "pairs": len(rep.pairs),
        "nondecreasing": bool(np.all(np.diff(rep.c_est) >= -1e-15)),
    }
    if exp.get("witness", False):
        counts = 3 * bounds.d + 2 * bounds.n + 1
        delta = 1.0 / (3 * bounds.d + 2 * bounds.n + 2)
        w_rows = []
        witness_summaries = []
        for mask, pot in zip(witness_sets(part), witness_potentials(a, witness_sets(part))):
            wd = witness_data(env.op, pot, mask, counts, delta, ladder)
            for i in range(counts):
                w_rows.append([mask.label, i, repr(wd.energies[i]),
                               repr(float(np.sum(wd.vectors[:, i] ** 2)))])
            witness_summaries.append({"set": mask.label, "c": wd.c, "k": wd.k,
                                      "min_energy": float(np.min(wd.energies))})
        report.write_csv(env.path("witness.csv"), ["set", "index", "energy", "norm_sq"], w_rows)
        rep.witnesses = witness_summaries
        results["witness"] = witness_summaries
        results["witness_counts"] = counts
        results["witness_delta"] = delta
    if env.figures:
        report.fig_stability(env.path("stability.png"), rep.c_est, rep.k_est)
    return results


def _run_converse(env: _Env) -> dict:
    exp = env.cfg["experiment"]
    q1 = _parse_potential(env.grid, exp["q1"], label="q1")
    q2 = _parse_potential(env.grid, exp["q2"], label="q2")
    rep = converse_check(env.op, q1, q2, tol=float(exp.get("tol", 1e-8)))
    report.write_csv(env.path("difference_eigenvalues.csv"), ["index", "eigenvalue"],
                     [[i, repr(v)] for i, v in enumerate(np.sort(rep.verdict_geq.eigenvalues))])
    results = {
        "q1_geq_q2": rep.q1_geq_q2,
        "q2_geq_q1": rep.q2_geq_q1,
        "loewner_geq_holds": rep.verdict_geq.holds,
        "loewner_leq_holds": rep.verdict_leq.holds,
        "neg_count_geq": rep.verdict_geq.neg_count,
        "neg_count_leq": rep.verdict_leq.neg_count,
        "consistent": rep.consistent,
    }
    if "linearized_cells" in exp:
        part = uniform_partition(env.grid, exp["linearized_cells"])
        lin_rows = []
        agree = True
        for sign, tag in ((1.0, "+"), (-1.0, "-")):
            for j, m in enumerate(part.masks):
                r = sign * np.where(m.flags, 1.0, 0.0)
                chk = linearized_converse_check(env.op, q1, r)
                expected = chk["r_nonneg"]
                agree &= chk["derivative_psd"] == expected
                lin_rows.append([f"{tag}cell:{j}", int(chk["r_nonneg"]), int(chk["derivative_psd"]),
                                 int(chk["r_nonpos"]), int(chk["derivative_nsd"])])
        report.write_csv(env.path("linearized.csv"),
                         ["direction", "r_nonneg", "psd", "r_nonpos", "nsd"], lin_rows)
        results["linearized_consistent"] = agree
    if env.figures:
        report.fig_spectrum(env.path("difference_spectrum.png"), rep.verdict_geq.eigenvalues,
                            title="DtN difference spectrum")
    return results


_RUNNERS = {
    "forward": _run_forward,
    "dtn": _run_dtn,
    "mono-check": _run_mono_check,
    "locpot": _run_locpot,
    "detect-definite": lambda env: _run_detection(env, "definite"),
    "detect-indefinite": lambda env: _run_detection(env, "indefinite"),
    "reconstruct": _run_reconstruct,
    "stability": _run_stability,
    "converse-check": _run_converse,
}


def run(cfg: dict, out_dir) -> dict:
    """Validate, execute, and write reports. Returns the summary dict."""
    cfg = validate_config(cfg)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    env = _Env(cfg, out)
    kind = cfg["experiment"]["kind"]
    results = _RUNNERS[kind](env)
    summary = {
        "kind": kind,
        "config": cfg,
        "grid": {"n_I": env.grid.n_I, "n_E": env.grid.n_E, "m": env.grid.m},
        "results": results,
    }
    report.write_json(env.path("summary.json"), summary)
    return summary


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="fracmono",
        description="Deterministic experiments for the fractional monotonicity toolbox",
    )
    parser.add_argument("kind", choices=KINDS, help="experiment kind (must match the config)")
    parser.add_argument("--config", required=True, help="path to the JSON experiment config")
    parser.add_argument("--out", default="out", help="output directory (default: ./out)")
    parser.add_argument("--seed", type=int, default=None, help="override the config seed")
    parser.add_argument("--threads", type=int, default=None,
                        help="BLAS thread cap (exported to the environment; single-threaded "
                             "runs are the reproducible default)")
    args = parser.parse_args(argv)

    if args.threads is not None:
        for var in ("OMP_NUM_THREADS", "OPENBLAS_NUM_THREADS", "MKL_NUM_THREADS"):
            os.environ[var] = str(args.threads)

    out = Path(args.out)
    try:
        with open(args.config, "r", encoding="utf-8") as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        out.mkdir(parents=True, exist_ok=True)
        report.write_json(out / "error.json", {"error": type(exc).__name__, "message": str(exc)})
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 2

    if args.seed is not None:
        cfg = dict(cfg)
        cfg["seed"] = args.seed

    try:
        if isinstance(cfg, dict) and cfg.get("experiment", {}).get("kind") not in (None, args.kind):
            raise ConfigError(
                f"config.experiment.kind: {cfg['experiment']['kind']!r} does not match "
                f"command {args.kind!r}"
            )
        summary = run(cfg, out)
    except ConfigError as exc:
        out.mkdir(parents=True, exist_ok=True)
        report.write_json(out / "error.json", {"error": type(exc).__name__, "message": str(exc)})
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except FracmonoError as exc:
        out.mkdir(parents=True, exist_ok=True)
        report.write_json(out / "error.json", {"error": type(exc).__name__, "message": str(exc)})
        print(f"error [{type(exc).__name__}]: {exc}", file=sys.stderr)
        return 1

    print(f"{args.kind}: wrote {out / 'summary.json'}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
