"""Command-line interface: ``pmjp simulate | infer | loglik | diagnose``.

Exit codes: 0 success, 2 usage or validation error, 3 runtime or resource error.
"""

from __future__ import annotations

import argparse
import csv
import io
import json
import logging
import sys
from pathlib import Path

import numpy as np

from . import diagnostics
from .errors import DimensionError, InfeasibleError, ModelError, ResourceError
from .model import load_model
from .roulette import StoppingSchedule, cv_diagnostic
from .samplers import ALGORITHMS, SamplerConfig, pilot_tune, run_chains
from .ssa import gillespie, observe
from .trajectory import ObservationSet

EXIT_OK, EXIT_USAGE, EXIT_RUNTIME = 0, 2, 3


class UsageError(Exception):
    pass


def _floats(text, what):
    try:
        vals = tuple(float(v) for v in text.replace(",", " ").split())
    except ValueError:
        raise UsageError(f"{what}: expected a list of numbers, got {text!r}") from None
    if not vals:
        raise UsageError(f"{what}: empty list")
    return vals


def _theta(text, model):
    if text is None:
        if model.default_theta is None:
            raise UsageError("--theta is required for this model")
        return np.array(model.default_theta)
    theta = np.array(_floats(text, "--theta"))
    if theta.size != model.n_params:
        raise UsageError(f"--theta needs {model.n_params} values, got {theta.size}")
    for i, v in enumerate(theta):
        if not v > 0:
            raise UsageError(f"--theta: parameter theta[{i}] must be positive, got {v}")
    return theta


def _model(ref):
    try:
        return load_model(ref)
    except FileNotFoundError:
        raise UsageError(f"model file not found: {ref}") from None


def _observations(path, model):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"observations file not found: {path}")
    return ObservationSet.from_csv(p.read_text(encoding="utf-8"), model.species_names)


def _write(path, text):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text, encoding="utf-8")


def _json(obj):
    return json.dumps(obj, indent=2, sort_keys=True) + "\n"


# ---------------------------------------------------------------------------
# commands

def cmd_simulate(args):
    model = _model(args.model)
    theta = _theta(args.theta, model)
    if args.init is not None:
        init = np.array([int(v) for v in _floats(args.init, "--init")], dtype=np.int64)
    elif model.init is not None:
        init = np.array(model.init, dtype=np.int64)
    else:
        raise UsageError("--init is required for this model")
    if init.size != model.n_species:
        raise UsageError(f"--init needs {model.n_species} counts")
    if args.obs_times is not None:
        times = np.array(_floats(args.obs_times, "--obs-times"))
    else:
        if args.n_obs < 1:
            raise UsageError("--n-obs must be at least 1")
        times = np.linspace(0.0, args.t_end, args.n_obs)
    if not args.t_end > 0:
        raise UsageError("--t-end must be positive")
    rng = np.random.default_rng(args.seed)
    traj = gillespie(model, theta, init, args.t_end, rng)
    obs = observe(traj, times, model.species_names)
    out = Path(args.out)
    _write(out / "trajectory.csv", traj.to_csv(model.species_names))
    _write(out / "observations.csv", obs.to_csv(model.species_names))
    print(f"wrote {out / 'trajectory.csv'} ({traj.n_jumps} jumps) and {out / 'observations.csv'} ({len(obs)} rows)")
    return EXIT_OK


def _samples_csv(result, n_params):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["iteration", *[f"theta_{i}" for i in range(n_params)], "accepted", "m", "wall_ms"])
    for k in range(result.samples.shape[0]):
        w.writerow([int(result.iterations[k]), *[repr(float(v)) for v in result.samples[k]],
                    int(result.accepted[k]), int(result.levels[k]), f"{result.wall_ms[k]:.3f}"])
    return buf.getvalue()


def _strip_timing(text):
    """Samples CSV without the wall-clock column, for the byte-stable merged file."""
    rows = list(csv.reader(io.StringIO(text)))
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    for r in rows:
        w.writerow(r[:-1])
    return buf.getvalue()


def cmd_infer(args):
    model = _model(args.model)
    obs = _observations(args.observations, model)
    proposal_sd = _floats(args.proposal_sd, "--proposal-sd") if args.proposal_sd else None
    if proposal_sd is not None and len(proposal_sd) == 1:
        proposal_sd = proposal_sd * model.n_params
    if args.algorithm == "pm-mh" and proposal_sd is None:
        raise UsageError("pm-mh requires --proposal-sd")
    if proposal_sd is not None and len(proposal_sd) != model.n_params:
        raise UsageError(f"--proposal-sd needs 1 or {model.n_params} values")
    try:
        config = SamplerConfig(
            algorithm=args.algorithm, iterations=args.iterations, burn_in=args.burn_in, thin=args.thin,
            proposal_sd=proposal_sd, log_proposal=args.log_proposal, schedule_a=args.schedule_a,
            fixed_level=args.fixed_level, gamma_multiplier=args.gamma_multiplier, seed=args.seed,
            chains=args.chains, workers=args.workers, box_margin=args.box_margin,
            init_theta=_theta(args.init_theta, model) if args.init_theta else None,
            keep_trajectories=args.keep_trajectories)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if config.init_theta is not None:
        config.init_theta = tuple(float(v) for v in config.init_theta)
    if args.pilot and config.algorithm == "pm-mh":
        config.proposal_sd = pilot_tune(config, model, obs)
        logging.info("pilot-tuned proposal sds: %s", config.proposal_sd)
    results = run_chains(config, model, obs)
    out = Path(args.out)
    merged = []
    for r in results:
        text = _samples_csv(r, model.n_params)
        _write(out / f"samples_chain{r.chain}.csv", text)
        body = _strip_timing(text).splitlines(keepends=True)
        if not merged:
            merged.append(f"chain,{body[0]}")
        merged.extend(f"{r.chain},{line}" for line in body[1:])
        for it, traj in r.trajectories:
            _write(out / "trajectories" / f"chain{r.chain}_iter{it}.csv", traj.to_csv(model.species_names))
    _write(out / "samples.csv", "".join(merged))
    n = min(r.samples.shape[0] for r in results)
    arr = np.stack([r.samples[:n] for r in results])
    wall = sum(r.wall_minutes for r in results)
    extra = {
        "algorithm": config.algorithm,
        "acceptance_rate": [r.acceptance_rate for r in results],
        "events": [r.notes for r in results],
    }
    summary = diagnostics.summarize(arr, [f"theta_{i}" for i in range(model.n_params)],
                                    wall_minutes=None, seed=config.seed, config=config.to_dict(), extra=extra)
    _write(out / "summary.json", _json(summary))
    # wall-clock figures vary run to run, so they live apart from the summary
    _write(out / "timing.json", _json({"wall_minutes": wall,
                                        "ess_per_min": {k: v["ess"] / wall if wall else None
                                                        for k, v in summary["parameters"].items()}}))
    print(f"wrote {len(results)} chain(s) of {n} samples to {out}")
    return EXIT_OK


def cmd_loglik(args):
    model = _model(args.model)
    theta = _theta(args.theta, model)
    try:
        schedule = StoppingSchedule(args.schedule_a)
    except ValueError as exc:
        raise UsageError(str(exc)) from None
    if args.reps < 2:
        raise UsageError("--reps must be at least 2")
    obs = _observations(args.observations, model)
    if len(obs) < 2:
        raise UsageError("need at least two observations")
    rng = np.random.default_rng(args.seed)
    rep = cv_diagnostic(obs, model, theta, schedule, args.reps, rng)
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(["replicate", "log_likelihood"])
    for i, v in enumerate(rep.log_estimates):
        w.writerow([i, repr(float(v))])
    out = Path(args.out)
    _write(out / "loglik.csv", buf.getvalue())
    report = {"schema_version": diagnostics.SCHEMA_VERSION, "schedule_a": args.schedule_a,
              "expected_terms": schedule.expected_terms(), "reps": args.reps, "seed": args.seed,
              "theta": [float(t) for t in theta], "mean": rep.mean, "variance": rep.variance,
              "cv": rep.cv, "n_zero": rep.n_zero}
    _write(out / "cv_report.json", _json(report))
    print(f"CV = {rep.cv:.6g} over {args.reps} estimates ({rep.n_zero} zero)")
    return EXIT_OK


def _read_samples(path):
    p = Path(path)
    if not p.is_file():
        raise UsageError(f"samples file not found: {path}")
    rows = list(csv.reader(io.StringIO(p.read_text(encoding="utf-8"))))
    if not rows:
        raise UsageError(f"{path}: empty file")
    header = rows[0]
    cols = [i for i, h in enumerate(header) if h.startswith("theta_")]
    if not cols:
        raise UsageError(f"{path}: no theta_* columns")
    try:
        data = np.array([[float(r[i]) for i in cols] for r in rows[1:] if r], dtype=float)
    except (ValueError, IndexError):
        raise UsageError(f"{path}: malformed sample rows") from None
    return [header[i] for i in cols], data.reshape(-1, len(cols))


def cmd_diagnose(args):
    names, chains = None, []
    for f in args.samples:
        cols, data = _read_samples(f)
        if names is not None and cols != names:
            raise UsageError(f"{f}: parameter columns differ from the first file")
        names = cols
        chains.append(data)
    if len(chains) < 2:
        raise UsageError("PSRF needs at least two chain files")
    n = min(c.shape[0] for c in chains)
    if n < 10:
        raise UsageError("each chain needs at least 10 samples")
    arr = np.stack([c[:n] for c in chains])
    sys.stdout.write(_json(diagnostics.summarize(arr, names)))
    return EXIT_OK


# ---------------------------------------------------------------------------

def build_parser():
    p = argparse.ArgumentParser(prog="pmjp", description="Bayesian inference for population Markov jump processes.")
    p.add_argument("--verbose", "-v", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("simulate", help="simulate a path and exact observations")
    s.add_argument("--model", required=True, help="built-in name or model file")
    s.add_argument("--theta", help="rate constants, comma or space separated")
    s.add_argument("--init", help="initial counts (defaults to the model's init line)")
    s.add_argument("--t-end", type=float, required=True)
    s.add_argument("--obs-times", help="explicit observation times")
    s.add_argument("--n-obs", type=int, default=20, help="equally spaced observations on [0, t-end]")
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--out", required=True)
    s.set_defaults(func=cmd_simulate)

    i = sub.add_parser("infer", help="sample the posterior over rate constants")
    i.add_argument("--model", required=True)
    i.add_argument("--observations", required=True)
    i.add_argument("--algorithm", choices=ALGORITHMS, default="gibbs")
    i.add_argument("--iterations", type=int, default=1000)
    i.add_argument("--burn-in", type=int, default=0)
    i.add_argument("--thin", type=int, default=1)
    i.add_argument("--chains", type=int, default=1)
    i.add_argument("--workers", type=int, default=1, help="processes for running chains")
    i.add_argument("--seed", type=int, default=0)
    i.add_argument("--schedule-a", type=float, default=0.95)
    i.add_argument("--fixed-level", type=int, help="deterministic truncation level (trunc-gibbs / pm-mh)")
    i.add_argument("--gamma-multiplier", type=float, default=2.0)
    i.add_argument("--proposal-sd", help="pm-mh random-walk sds (one value or one per parameter)")
    i.add_argument("--log-proposal", action="store_true", help="propose on the log scale")
    i.add_argument("--pilot", action="store_true", help="tune pm-mh sds with short pilot runs")
    i.add_argument("--box-margin", type=int, default=10, help="gibbs: state-space margin above observed maxima")
    i.add_argument("--init-theta")
    i.add_argument("--keep-trajectories", type=int, default=0, help="write every n-th retained path")
    i.add_argument("--out", required=True)
    i.set_defaults(func=cmd_infer)

    ll = sub.add_parser("loglik", help="replicate roulette log-likelihood estimates")
    ll.add_argument("--model", required=True)
    ll.add_argument("--observations", required=True)
    ll.add_argument("--theta")
    ll.add_argument("--schedule-a", type=float, default=0.95)
    ll.add_argument("--reps", type=int, default=1000)
    ll.add_argument("--seed", type=int, default=0)
    ll.add_argument("--out", required=True)
    ll.set_defaults(func=cmd_loglik)

    d = sub.add_parser("diagnose", help="summarise per-chain sample CSVs")
    d.add_argument("samples", nargs="+")
    d.set_defaults(func=cmd_diagnose)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code) if exc.code is not None else EXIT_USAGE
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        return args.func(args)
    except (UsageError, ModelError, DimensionError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ResourceError, InfeasibleError, RuntimeError, OSError, MemoryError) as exc:
        print(f"runtime error: {exc}", file=sys.stderr)
        return EXIT_RUNTIME


if __name__ == "__main__":
    sys.exit(main())
