"""Command line entry point, ``icexperts <subcommand>``.

Exit codes: 0 success, 2 usage error, 3 data error, 4 configuration or
other library error.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import sys
from pathlib import Path

import numpy as np

from .config import load_config
from .data import filter_complete, ingest_nfl_csv, synthetic_dataset
from .errors import ArtifactError, DataError
from .ftpl import FTPL, ic_deviation_bound
from .noise import check_condition1, get_noise
from .nfl import ExperimentConfig, run_nfl_experiment
from .sim import (
    ALGORITHMS, AUDIT_COLUMNS, TRACE_COLUMNS, AgentPolicy, Environment, SimConfig, brute_force_opt,
    build_algorithm, ic_audit, read_script, run_experiment, write_audit_csv,
)
from .utilities import MODULAR, SUBMODULAR, UtilityKind, quadratic_loss

EXIT_USAGE, EXIT_DATA, EXIT_CONFIG = 2, 3, 4
POLICIES = ("truthful", "best-response", "uniform-perturbed", "extremizer")


def _experts_arg(text: str) -> tuple[int, ...]:
    try:
        return tuple(int(v) for v in text.split(",") if v.strip())
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated expert indices, got {text!r}") from None


def _add_common(p: argparse.ArgumentParser, m_default: int = 1) -> None:
    p.add_argument("--algo", choices=ALGORITHMS, default="ftpl", help="learning algorithm (default: ftpl)")
    p.add_argument("--K", type=int, default=10, help="number of experts (default: 10)")
    p.add_argument("--m", type=int, default=m_default, help=f"experts chosen per round (default: {m_default})")
    p.add_argument("--utility", dest="kind", choices=(MODULAR, SUBMODULAR), default=MODULAR,
                   help="utility function (default: modular)")
    p.add_argument("--eta", type=float, default=None, help="step size; omitted means the theoretical default")
    p.add_argument("--noise", default="laplace",
                   help="FTPL perturbation: laplace, hyperbolic, gaussian or gumbel (default: laplace)")
    p.add_argument("--seed", type=int, default=0, help="base random seed (default: 0)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="icexperts",
                                     description="Incentive-compatible online learning with m experts.")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="synthetic runs, one regret trace per seed")
    _add_common(p)
    p.add_argument("--T", type=int, default=512, help="horizon (default: 512)")
    p.add_argument("--seeds", type=int, default=1, help="number of consecutive seeds to run (default: 1)")
    p.add_argument("--policy", choices=POLICIES, default="truthful", help="agent policy (default: truthful)")
    p.add_argument("--policy-param", type=float, default=0.0,
                   help="half-width for uniform-perturbed, push for extremizer")
    p.add_argument("--strategic", type=_experts_arg, default=(),
                   help="comma-separated experts following --policy; default all")
    p.add_argument("--audit-every", type=int, default=16, help="best-response audit period (default: 16)")
    p.add_argument("--mc-samples", type=int, default=2_000,
                   help="Monte Carlo draws per FTPL best-response audit (default: 2000)")
    p.add_argument("--script", default=None,
                   help="adversarial script CSV (K beliefs then the outcome per row); overrides --K/--T")
    p.add_argument("--out", default=None, help="directory for trace CSVs; default writes CSV to stdout")
    p.add_argument("--audit-out", default=None, help="CSV file for best-response audits")

    p = sub.add_parser("nfl", help="forecast-competition pipeline with percentile bands")
    src = p.add_mutually_exclusive_group(required=True)
    src.add_argument("--data", help="forecast CSV (game_id,date,forecaster_id,prob_home_win,home_won); "
                                    "relative paths fall back to $ICEXPERTS_DATA_DIR")
    src.add_argument("--synthetic", action="store_true", help="use the built-in synthetic season")
    p.add_argument("--config", default=None, help="flat key = value experiment file")
    p.add_argument("--K", type=int, default=None, help="group size (overrides the config)")
    p.add_argument("--m", type=int, default=None, help="experts chosen per round (overrides the config)")
    p.add_argument("--groups", type=int, default=None, help="number of groups (overrides the config)")
    p.add_argument("--runs", type=int, default=None, help="runs per group (overrides the config)")
    p.add_argument("--seed", type=int, default=None, help="seed (overrides the config)")
    p.add_argument("--outdir", default="nfl_out", help="output directory (default: nfl_out)")

    p = sub.add_parser("audit-ic", help="best-response audit after a random truthful history")
    _add_common(p)
    p.add_argument("--T", type=int, default=512, help="horizon used for default step sizes (default: 512)")
    p.add_argument("--history", type=int, default=20, help="rounds of history before the audit (default: 20)")
    p.add_argument("--experts", type=_experts_arg, default=None, help="experts to audit; default all")
    p.add_argument("--belief", type=float, default=None, help="belief to audit; default drawn uniformly")
    p.add_argument("--step", type=float, default=1e-3, help="report grid step (default: 0.001)")
    p.add_argument("--mc-samples", type=int, default=100_000,
                   help="Monte Carlo draws for FTPL audits (default: 100000)")
    p.add_argument("--objective", choices=("weight", "inclusion"), default="weight",
                   help="ODG audit target: summed instance weights or set inclusion probability")
    p.add_argument("--out", default=None, help="audit CSV file; default stdout")

    p = sub.add_parser("noise-check", help="nu, nu' and hazard rate of a perturbation law on a grid")
    p.add_argument("--model", default="laplace", help="laplace, hyperbolic, gaussian or gumbel")
    p.add_argument("--grid-min", type=float, default=-20.0, help="grid start (default: -20)")
    p.add_argument("--grid-max", type=float, default=20.0, help="grid end (default: 20)")
    p.add_argument("--step", type=float, default=0.01, help="grid step (default: 0.01)")

    p = sub.add_parser("opt", help="best fixed set in hindsight by enumeration")
    p.add_argument("--script", default=None, help="script CSV whose beliefs and outcomes define the losses")
    p.add_argument("--K", type=int, default=8, help="experts for a random instance (default: 8)")
    p.add_argument("--T", type=int, default=100, help="rounds for a random instance (default: 100)")
    p.add_argument("--m", type=int, default=3, help="set size (default: 3)")
    p.add_argument("--utility", dest="kind", choices=(MODULAR, SUBMODULAR), default=SUBMODULAR,
                   help="utility function (default: submodular)")
    p.add_argument("--seed", type=int, default=0, help="seed for a random instance (default: 0)")
    return parser


def _cmd_simulate(args) -> int:
    env = Environment.from_script(args.script) if args.script else None
    K, T = (env.K, env.T) if env else (args.K, args.T)
    policy = AgentPolicy(args.policy, args.policy_param)
    out = Path(args.out) if args.out else None
    if out:
        out.mkdir(parents=True, exist_ok=True)
    audits: list = []
    finals = []
    writer = None if out else csv.writer(sys.stdout)
    if writer:
        writer.writerow(TRACE_COLUMNS)
    for seed in range(args.seed, args.seed + args.seeds):
        cfg = SimConfig(args.algo, K, args.m, T, args.kind, args.eta, args.noise, policy,
                        args.strategic, seed, args.audit_every, args.mc_samples)
        trace = run_experiment(cfg, env, audit_log=audits)
        finals.append(trace.alpha_regret[-1])
        if out:
            trace.write_csv(out / f"trace_{args.algo}_seed{seed}.csv")
        else:
            writer.writerows(trace.rows())
    if args.audit_out:
        write_audit_csv(args.audit_out, audits)
    print(f"{args.algo}: {args.seeds} run(s), T={T}, K={K}, m={args.m}, "
          f"mean final alpha-regret {np.mean(finals):.4f}", file=sys.stderr)
    return 0


def _cmd_nfl(args) -> int:
    config = load_config(args.config) if args.config else ExperimentConfig()
    overrides = {k: getattr(args, k) for k in ("K", "m", "groups", "runs", "seed") if getattr(args, k) is not None}
    config = dataclasses.replace(config, **overrides)
    if args.synthetic:
        dataset = synthetic_dataset(0)
    else:
        dataset = ingest_nfl_csv(args.data)
    dataset = filter_complete(dataset)
    result = run_nfl_experiment(config, dataset)
    for path in result.write(args.outdir):
        print(path)
    for algo in result.avg_regret:
        band = result.band(algo)
        print(f"{algo}: average regret at t={result.T} mean {band[-1, 1]:.4f} "
              f"[p20 {band[-1, 2]:.4f}, p80 {band[-1, 3]:.4f}]", file=sys.stderr)
    if not result.disjoint:
        print(f"note: {config.groups} groups of {config.K} do not fit in {len(dataset.forecasters)} "
              "forecasters; groups were drawn independently", file=sys.stderr)
    return 0


def _cmd_audit(args) -> int:
    rng = np.random.default_rng(args.seed)
    algo = build_algorithm(args.algo, args.K, args.m, args.T, args.kind, args.eta, args.noise)
    for _ in range(args.history):
        algo.select(rng)
        b = rng.random(args.K)
        algo.update(quadratic_loss(b, int(rng.random() < b.mean())))
    algo.select(rng)
    reports = rng.random(args.K)
    experts = range(args.K) if args.experts is None else args.experts
    records = []
    for i in experts:
        if not 0 <= i < args.K:
            raise DataError(f"expert {i} out of range for K={args.K}")
        belief = float(rng.random()) if args.belief is None else args.belief
        res = ic_audit(algo, i, belief, reports, step=args.step, samples=args.mc_samples, rng=rng,
                       objective=args.objective)
        records.append((args.history + 1, i, belief, res))
    if args.out:
        write_audit_csv(args.out, records)
    else:
        w = csv.writer(sys.stdout)
        w.writerow(AUDIT_COLUMNS)
        for t, i, belief, res in records:
            w.writerow([t, i, f"{belief:.17g}", f"{res.argmax_report:.17g}",
                        f"{res.deviation:.17g}", f"{res.gap:.17g}"])
    worst = max(r[3].deviation for r in records)
    msg = f"max deviation {worst:.4f} over {len(records)} expert(s)"
    if isinstance(algo, FTPL) and algo.eta > 2.0:
        bound = ic_deviation_bound(1.0, algo.eta)
        msg += f"; Laplace (B=1) bound at eta={algo.eta:g} is {bound:.4f}"
        msg += " -- exceeded" if worst > bound else " -- respected"
    print(msg, file=sys.stderr)
    return 0


def _cmd_noise_check(args) -> int:
    model = get_noise(args.model)
    if args.step <= 0 or args.grid_max <= args.grid_min:
        raise DataError("need grid-max > grid-min and a positive step")
    n = int(round((args.grid_max - args.grid_min) / args.step))
    z = np.linspace(args.grid_min, args.grid_min + n * args.step, n + 1)
    with np.errstate(over="ignore"):
        nu = np.atleast_1d(model.nu(z))
        nup = np.atleast_1d(model.nu_prime(z))
    with np.errstate(divide="ignore", invalid="ignore"):
        haz = np.exp(model.log_pdf(z) - model.log_sf(z))
    w = csv.writer(sys.stdout)
    w.writerow(("z", "nu", "nu_prime", "hazard"))
    for row in zip(z, nu, nup, haz):
        w.writerow([f"{v:.17g}" for v in row])
    rep = check_condition1(model, z)
    B = model.condition1_bound
    print(f"{model.name}: max |nu'| {rep.max_abs_nu_prime:.6g}, max hazard {np.nanmax(haz):.6g}, "
          f"declared B={'none' if B is None else B}, condition 1 {'holds' if rep.bounded else 'fails'}",
          file=sys.stderr)
    return 0


def _cmd_opt(args) -> int:
    if args.script:
        beliefs, outcomes = read_script(args.script)
    else:
        rng = np.random.default_rng(args.seed)
        beliefs = rng.random((args.T, args.K))
        outcomes = (rng.random(args.T) < beliefs.mean(axis=1)).astype(int)
    losses = quadratic_loss(beliefs, outcomes[:, None])
    S, total = brute_force_opt(losses, UtilityKind(args.kind, args.m))
    print(f"set={';'.join(map(str, S))} total={total:.17g}")
    return 0


_COMMANDS = {"simulate": _cmd_simulate, "nfl": _cmd_nfl, "audit-ic": _cmd_audit,
             "noise-check": _cmd_noise_check, "opt": _cmd_opt}


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return _COMMANDS[args.command](args)
    except DataError as exc:
        print(f"icexperts: data error: {exc}", file=sys.stderr)
        return EXIT_DATA
    except (ArtifactError, ValueError, OSError) as exc:
        print(f"icexperts: error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
