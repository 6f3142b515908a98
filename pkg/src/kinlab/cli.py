"""Experiment runner: configuration in, result tables and a metadata sidecar out.

Exit codes partition failures: 0 all checks pass, 1 configuration or
validation error, 2 tolerance failure (per-check report in metadata),
3 I/O failure.  CSV bodies are byte-identical across reruns with the same
config and seed; wall-clock timestamps live only in the JSON sidecar.
"""

from __future__ import annotations

import argparse
import csv
import datetime
import io
import json
import math
import os
import sys

import numpy as np

from . import __version__
from .combinatorics import verify_cluster_expansion
from .hierarchy import (
    additive_observable,
    additive_reduced_initial,
    evolve_full,
    mean_value_full,
    mean_value_reduced,
    reduce_observable,
    reduce_state,
)
from .kinetic import engine_for
from .model import (
    ConfigError,
    ExperimentConfig,
    ValidationError,
    build_initial_state,
    load_model_file,
)
from .montecarlo import estimate_means
from .sectors import SequenceState

EXPERIMENT_KINDS = (
    "duality-sweep",
    "fp-trajectory",
    "cluster-verify",
    "mc-vs-exact",
    "eps-convergence",
)

EPS_SWEEP = (0.2, 0.1, 0.05)


def _write_atomic(path: str, text: str):
    tmp = path + ".tmp"
    with open(tmp, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)
    os.replace(tmp, path)


def _csv_text(header, rows) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, quoting=csv.QUOTE_MINIMAL, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    return buf.getvalue()


def _fmt(x) -> str:
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def _observable_set(config: ExperimentConfig):
    """Named additive observables used by the comparison experiments."""
    n = config.model.n_states
    indicator = np.zeros(n)
    indicator[0] = 1.0
    parity = np.array([1.0 if i % 2 == 0 else -1.0 for i in range(n)])
    return [
        ("tracer_indicator", indicator, np.zeros(n)),
        ("env_parity", np.zeros(n), parity),
        ("additive_mixed", indicator, parity),
    ]


def run_cluster_verify(config: ExperimentConfig):
    model = config.model
    tol = 1e-9
    rows = []
    checks = []
    worst = 0.0
    pairs = [(s, n) for s in range(0, 3) for n in range(0, s + 1) if s + n <= 4]
    for t in (0.1, 0.5, 1.0):
        for s, n in pairs:
            res = verify_cluster_expansion(model, t, s, n)
            worst = max(worst, res)
            rows.append((t, s, n, _fmt(res), _fmt(tol), res <= tol))
    checks.append({"name": "cluster_expansion_max_residual", "value": worst,
                   "tolerance": tol, "pass": worst <= tol})
    tables = {"cluster_verify.csv": _csv_text(
        ("t", "s", "n", "residual", "tolerance", "pass"), rows)}
    return tables, checks


def run_duality_sweep(config: ExperimentConfig):
    model = config.model
    profile = config.profile
    eng = engine_for(model, profile)
    order = config.series_order
    tol = 1e-6
    t_grid = [config.t_max * k / 4 for k in range(1, 5)]
    rows = []
    mean_rows = []
    worst = 0.0
    ensemble, _ = build_initial_state(profile, model, config.activity)
    for t in t_grid:
        for name, o_t, o_e in _observable_set(config):
            b0 = additive_reduced_initial(o_t, o_e, model.n_max)
            rep = eng.duality_check(b0, t, order)
            worst = max(worst, rep.abs_residual)
            rows.append((t, name, _fmt(rep.lhs), _fmt(rep.rhs),
                         _fmt(rep.abs_residual), _fmt(rep.rel_residual),
                         order, _fmt(model.eps)))
            obs = additive_observable(o_t, o_e, model.n_max)
            obs_t = evolve_full(model, obs, t, "forward")
            mean_full = mean_value_full(obs_t, ensemble, model)
            reduced_obs = SequenceState(
                tuple(reduce_observable(obs_t, s) for s in range(model.n_max + 1)),
                kind="observable")
            reduced_state = SequenceState(
                tuple(reduce_state(ensemble, model, s) for s in range(model.n_max + 1)),
                kind="distribution")
            mean_red = mean_value_reduced(reduced_obs, reduced_state, model)
            mean_rows.append((t, name, _fmt(mean_full), _fmt(mean_red),
                              _fmt(abs(mean_full - mean_red))))
    checks = [{"name": "duality_max_abs_residual", "value": worst,
               "tolerance": tol, "pass": worst <= tol}]
    mean_worst = max(float(r[4]) for r in mean_rows)
    checks.append({"name": "mean_value_equivalence", "value": mean_worst,
                   "tolerance": 1e-10, "pass": mean_worst <= 1e-10})
    tables = {
        "duality.csv": _csv_text(
            ("t", "observable_id", "lhs", "rhs", "abs_residual", "rel_residual", "K", "eps"), rows),
        "mean_values.csv": _csv_text(
            ("t", "observable_id", "mean_full", "mean_reduced", "abs_residual"), mean_rows),
    }
    return tables, checks


def run_eps_convergence(config: ExperimentConfig):
    profile = config.profile
    order = config.series_order
    t = min(config.t_max, 0.25)
    rows = []
    residuals = []
    for eps in EPS_SWEEP:
        model = config.model.with_eps(eps)
        eng = engine_for(model, profile)
        name, o_t, o_e = _observable_set(config)[2]
        b0 = additive_reduced_initial(o_t, o_e, model.n_max)
        rep = eng.duality_check(b0, t, order)
        residuals.append(rep.abs_residual)
        rows.append((_fmt(eps), order, _fmt(t), name, _fmt(rep.abs_residual)))
    if all(r > 0 for r in residuals):
        slope = float(np.polyfit(np.log(EPS_SWEEP), np.log(residuals), 1)[0])
    else:
        slope = math.inf  # residual at machine zero: contraction is immediate
    want = order + 1.5
    checks = [
        {"name": "eps_sweep_smallest_residual", "value": residuals[-1],
         "tolerance": 1e-6, "pass": residuals[-1] <= 1e-6},
        {"name": "eps_sweep_loglog_slope", "value": slope,
         "tolerance": want, "pass": slope >= want},
    ]
    tables = {"eps_convergence.csv": _csv_text(
        ("eps", "K", "t", "observable_id", "abs_residual"), rows)}
    return tables, checks


def run_fp_trajectory(config: ExperimentConfig):
    model = config.model
    profile = config.profile
    eng = engine_for(model, profile)
    order = config.series_order
    traj = eng.integrate_fp(profile.tracer0, config.t_max, config.dt, order)
    n_u = len(model.grid)
    rows = []
    stride = max(1, len(traj) // 200)
    kept = traj[::stride]
    if kept[-1].t != traj[-1].t:
        kept.append(traj[-1])
    for td in kept:
        for e, val in enumerate(td.values):
            rows.append((_fmt(td.t), e // n_u + 1, e % n_u, _fmt(float(val)),
                         _fmt(td.mass_drift)))
    drift = max(abs(td.mass_drift) for td in traj)
    endpoint = traj[-1].values
    series = eng.reduced_distribution(config.t_max, order).values
    end_err = float(np.max(np.abs(endpoint - series)))
    checks = [
        {"name": "fp_mass_drift", "value": drift, "tolerance": 1e-9, "pass": drift <= 1e-9},
        {"name": "fp_endpoint_vs_series", "value": end_err, "tolerance": 1e-5,
         "pass": end_err <= 1e-5},
    ]
    if model.eps == 0.0:
        ws_err = 0.0
        from .operators import one_slot_term, TRACER
        from scipy.linalg import expm
        gen = one_slot_term(model, 0, TRACER, "dual")
        for td in kept:
            analytic = expm(td.t * gen) @ profile.tracer0
            ws_err = max(ws_err, float(np.max(np.abs(td.values - analytic))))
        checks.append({"name": "fp_free_relaxation", "value": ws_err,
                       "tolerance": 1e-8, "pass": ws_err <= 1e-8})
    tables = {"fp_trajectory.csv": _csv_text(
        ("t", "species", "micro_state", "F_value", "mass_drift"), rows)}
    return tables, checks


def run_mc_vs_exact(config: ExperimentConfig):
    model = config.model
    profile = config.profile
    n_traj = config.mc_trajectories or 20000
    t = min(config.t_max, 1.0)
    obs_set = _observable_set(config)
    observables = [additive_observable(o_t, o_e, model.n_max) for _, o_t, o_e in obs_set]
    ests = estimate_means(observables, profile, model, t, n_traj, config.seed,
                          z=config.activity)
    ensemble, _ = build_initial_state(profile, model, config.activity)
    rows = []
    worst_z = 0.0
    for (name, o_t, o_e), obs, est in zip(obs_set, observables, ests):
        obs_t = evolve_full(model, obs, t, "forward")
        exact = mean_value_full(obs_t, ensemble, model)
        zscore = (est.mean - exact) / est.stderr if est.stderr > 0 else 0.0
        worst_z = max(worst_z, abs(zscore))
        rows.append((name, _fmt(t), _fmt(est.mean), _fmt(est.stderr),
                     _fmt(exact), _fmt(zscore), est.n_samples))
    checks = [{"name": "mc_worst_abs_zscore", "value": worst_z,
               "tolerance": 3.0, "pass": worst_z <= 3.0}]
    tables = {"mc_vs_exact.csv": _csv_text(
        ("observable_id", "t", "mc_mean", "mc_stderr", "exact", "zscore", "n_trajectories"),
        rows)}
    return tables, checks


RUNNERS = {
    "cluster-verify": run_cluster_verify,
    "duality-sweep": run_duality_sweep,
    "eps-convergence": run_eps_convergence,
    "fp-trajectory": run_fp_trajectory,
    "mc-vs-exact": run_mc_vs_exact,
}


def apply_overrides(config: ExperimentConfig, args) -> ExperimentConfig:
    model = config.model
    if args.eps is not None:
        model = model.with_eps(args.eps)
    return ExperimentConfig(
        model=model,
        profile=config.profile,
        activity=config.activity,
        t_max=args.t_max if args.t_max is not None else config.t_max,
        dt=args.dt if args.dt is not None else config.dt,
        series_order=args.order if args.order is not None else config.series_order,
        mc_trajectories=config.mc_trajectories,
        seed=args.seed if args.seed is not None else config.seed,
        out_dir=args.out if args.out is not None else config.out_dir,
        out_format=args.format if args.format is not None else config.out_format,
    )


def run(config_path: str, kind: str, args) -> int:
    started = datetime.datetime.now(datetime.timezone.utc).isoformat()
    if kind not in RUNNERS:
        print(f"error: unknown experiment kind {kind!r}", file=sys.stderr)
        return 1
    try:
        config = load_model_file(config_path)
        config = apply_overrides(config, args)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error: cannot read config: {exc}", file=sys.stderr)
        return 3
    try:
        tables, checks = RUNNERS[kind](config)
    except (ConfigError, ValidationError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    finished = datetime.datetime.now(datetime.timezone.utc).isoformat()
    meta = {
        "kind": kind,
        "config_hash": config.key,
        "seed": config.seed,
        "version": __version__,
        "started_at": started,
        "finished_at": finished,
        "checks": checks,
    }
    try:
        os.makedirs(config.out_dir, exist_ok=True)
        for name, text in tables.items():
            if config.out_format == "json":
                body = _csv_to_json(text)
                _write_atomic(os.path.join(config.out_dir, name.replace(".csv", ".json")), body)
            else:
                _write_atomic(os.path.join(config.out_dir, name), text)
        _write_atomic(os.path.join(config.out_dir, "metadata.json"),
                      json.dumps(meta, indent=2) + "\n")
    except OSError as exc:
        print(f"error: cannot write results: {exc}", file=sys.stderr)
        return 3
    for check in checks:
        status = "pass" if check["pass"] else "FAIL"
        print(f"[{status}] {check['name']}: value {check['value']:.6g} "
              f"vs tolerance {check['tolerance']:.6g}")
    if not all(c["pass"] for c in checks):
        return 2
    return 0


def _csv_to_json(text: str) -> str:
    reader = csv.reader(io.StringIO(text))
    rows = list(reader)
    header, body = rows[0], rows[1:]
    return json.dumps([dict(zip(header, row)) for row in body], indent=2) + "\n"


def report(result_dir: str) -> int:
    meta_path = os.path.join(result_dir, "metadata.json")
    try:
        with open(meta_path, "r", encoding="utf-8") as fh:
            meta = json.load(fh)
    except OSError as exc:
        print(f"error: cannot read results: {exc}", file=sys.stderr)
        return 3
    except json.JSONDecodeError as exc:
        print(f"error: corrupt metadata: {exc}", file=sys.stderr)
        return 3
    print(f"experiment: {meta.get('kind')}  config {meta.get('config_hash')} "
          f"seed {meta.get('seed')} version {meta.get('version')}")
    all_pass = True
    for check in meta.get("checks", []):
        status = "pass" if check["pass"] else "FAIL"
        all_pass = all_pass and check["pass"]
        print(f"  [{status}] {check['name']}: {check['value']:.6g} "
              f"(tolerance {check['tolerance']:.6g})")
    tidy_rows = []
    for name in sorted(os.listdir(result_dir)):
        if not name.endswith(".csv") or name == "plot_data.csv":
            continue
        with open(os.path.join(result_dir, name), "r", encoding="utf-8") as fh:
            reader = csv.reader(fh)
            header = next(reader)
            for row in reader:
                for col, val in zip(header, row):
                    try:
                        fval = float(val)
                    except ValueError:
                        continue
                    tidy_rows.append((name[:-4], col, *row[:1], _fmt(fval)))
    _write_atomic(os.path.join(result_dir, "plot_data.csv"),
                  _csv_text(("table", "column", "first_key", "value"), tidy_rows))
    if meta.get("kind") == "eps-convergence":
        path = os.path.join(result_dir, "eps_convergence.csv")
        if os.path.exists(path):
            with open(path, "r", encoding="utf-8") as fh:
                reader = csv.DictReader(fh)
                pts = [(float(r["eps"]), float(r["abs_residual"]), r["K"]) for r in reader]
            if pts and all(p[1] > 0 for p in pts):
                slope = float(np.polyfit(np.log([p[0] for p in pts]),
                                         np.log([p[1] for p in pts]), 1)[0])
            else:
                slope = math.inf
            print("  eps        K  residual      fitted_slope")
            for eps, res, k in pts:
                print(f"  {eps:<9g} {k:>2} {res:<13.6g} {slope:.3f}")
    print("result:", "all checks pass" if all_pass else "tolerance failures present")
    return 0


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="kinlab",
                                     description="open-system kinetic-theory laboratory")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="execute an experiment from a config file")
    p_run.add_argument("--config", required=True)
    p_run.add_argument("--kind", required=True, choices=EXPERIMENT_KINDS)
    p_run.add_argument("--out", default=None)
    p_run.add_argument("--seed", type=int, default=None)
    p_run.add_argument("--eps", type=float, default=None)
    p_run.add_argument("--order", type=int, default=None, help="series truncation order K")
    p_run.add_argument("--t-max", type=float, default=None, dest="t_max")
    p_run.add_argument("--dt", type=float, default=None)
    p_run.add_argument("--format", choices=("csv", "json"), default=None)
    p_rep = sub.add_parser("report", help="summarize a result directory")
    p_rep.add_argument("result_dir")
    args = parser.parse_args(argv)
    if args.command == "run":
        return run(args.config, args.kind, args)
    return report(args.result_dir)


if __name__ == "__main__":
    sys.exit(main())
