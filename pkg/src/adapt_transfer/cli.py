"""``adapt`` command line: train, fit, run, suite, sweep, trend.

Exit codes: 0 success, 2 configuration error, 3 artifact mismatch,
4 divergence in a single run.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__, config as cfgmod
from ._backend import BACKEND
from .costs import make_cost
from .dynamics import ConfigurationError
from .harness import (
    EPISODE_COLUMNS,
    build_target,
    disturbance_sweep,
    episode_rows,
    episode_seeds,
    run_adapt,
    run_ideal,
    run_naive,
    run_suite,
    scaling_trend,
    to_csv,
)
from .models import make_model
from .policy import PolicyParams, RolloutDivergedError, rollout_nominal, train_policy
from .serialize import DocumentError

log = logging.getLogger("adapt_transfer")

EXIT_OK, EXIT_CONFIG, EXIT_ARTIFACT, EXIT_DIVERGED = 0, 2, 3, 4


class ArtifactError(Exception):
    pass


def _setup_logging():
    level = os.environ.get("ADAPT_LOG", "error").upper()
    if level not in ("ERROR", "INFO", "DEBUG"):
        level = "ERROR"
    logging.basicConfig(level=getattr(logging, level), format="%(levelname)s %(name)s: %(message)s")


def _write(path: Path, text: str):
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(text)


def _manifest(cfg, command: str, extra: dict) -> str:
    doc = {"command": command, "config_sha256": cfgmod.config_hash(cfg), "version": __version__,
           "backend": BACKEND, "created": time.strftime("%Y-%m-%dT%H:%M:%S%z"), "master_seed": cfg.seed}
    doc.update(extra)
    return json.dumps(doc, indent=2, sort_keys=True) + "\n"


def _seed_table(master: int, episodes: int):
    return [{"episode": k, "seed_entropy": [master, k]} for k in range(episodes)]


def _load_policy(path, env) -> PolicyParams:
    try:
        policy = PolicyParams.load(path)
    except (OSError, DocumentError, KeyError, ValueError) as exc:
        raise ArtifactError(f"cannot load policy {path}: {exc}") from exc
    if policy.env != env.name or policy.sizes[0] != env.feature_dim or policy.sizes[-1] != env.action_dim:
        raise ArtifactError(
            f"policy for {policy.env} with sizes {policy.sizes} does not fit the {env.name} environment"
        )
    return policy


def _policy(args, cfg, env) -> PolicyParams:
    if args.policy:
        return _load_policy(args.policy, env)
    log.info("no --policy given; training from the config")
    return train_policy(env, make_cost(env), cfgmod.train_config(cfg), cfgmod.restricted_sets(cfg, env))


def _out_dir(args, cfg) -> Path:
    return Path(args.out or cfg.output_dir)


# ------------------------------------------------------------------ commands

def cmd_train(args, cfg) -> int:
    env = cfgmod.build_env(cfg)
    policy, history = train_policy(env, make_cost(env), cfgmod.train_config(cfg),
                                   cfgmod.restricted_sets(cfg, env), return_history=True)
    out = Path(args.out or Path(cfg.output_dir) / "policy.bin")
    out.parent.mkdir(parents=True, exist_ok=True)
    policy.save(out)
    rows = [{"iteration": it, "best": b, "elite_mean": e, "population_mean": p} for it, b, e, p in history]
    _write(out.with_name(out.stem + "_training.csv"),
           to_csv(rows, ("iteration", "best", "elite_mean", "population_mean")))
    print(f"policy written to {out}")
    return EXIT_OK


def cmd_fit(args, cfg) -> int:
    env = cfgmod.build_env(cfg)
    policy = _policy(args, cfg, env)
    start_rng, _ = episode_seeds(cfg.seed, args.seed)
    nom = rollout_nominal(policy, env, env.sample_initial_state(start_rng))
    fit_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, args.seed, 7]))
    model = make_model("tv-linear", env, nom, cfgmod.fit_config(cfg), fit_rng)
    out = Path(args.out or Path(cfg.output_dir) / "model.bin")
    out.parent.mkdir(parents=True, exist_ok=True)
    model.save(out)
    print(f"model written to {out} (max fit residual {model.meta.residual_rms.max():.3g})")
    return EXIT_OK


def cmd_run(args, cfg) -> int:
    env = cfgmod.build_env(cfg)
    policy = _policy(args, cfg, env)
    cost = make_cost(env)
    start_rng, dist_ss = episode_seeds(cfg.seed, args.seed)
    s0 = env.sample_initial_state(start_rng)
    try:
        nom = rollout_nominal(policy, env, s0)
    except RolloutDivergedError as exc:
        log.error("%s", exc)
        return EXIT_DIVERGED
    spec = cfgmod.disturbance_spec(cfg)
    target = build_target(env, spec, dist_ss)
    if args.mode == "ideal":
        res = run_ideal(policy, env, s0, cost, args.seed)
    elif args.mode == "naive":
        res = run_naive(policy, target, s0, cost, args.seed, nom)
    else:
        fit_rng = np.random.default_rng(np.random.SeedSequence([cfg.seed, args.seed, 7]))
        model = make_model(cfg.model.kind, env, nom, cfgmod.fit_config(cfg), fit_rng)
        res = run_adapt(policy, target, model, cfgmod.mpc_config(cfg, env), s0, cost, args.seed, nom)
    out = _out_dir(args, cfg)
    stem = f"episode_{args.mode}_{args.seed}"
    _write(out / f"{stem}.csv", to_csv(episode_rows(res), EPISODE_COLUMNS))
    _write(out / "config.yaml", cfgmod.echo(cfg))
    _write(out / f"{stem}_manifest.json", _manifest(cfg, "run", {
        "mode": args.mode, "episode": args.seed, "seed_table": _seed_table(cfg.seed, args.seed + 1)[-1:],
        "disturbances": list(spec.active), "diverged_at": res.diverged_at}))
    if res.diverged:
        log.error("episode diverged at step %d", res.diverged_at)
        return EXIT_DIVERGED
    print(f"{args.mode}: final normalized cost {res.final_normalized:.9g}")
    return EXIT_OK


def _episodes(args, cfg, default=None) -> int:
    return args.episodes or default or cfg.episodes


def cmd_suite(args, cfg) -> int:
    env = cfgmod.build_env(cfg)
    policy = _policy(args, cfg, env)
    K = _episodes(args, cfg)
    spec = cfgmod.disturbance_spec(cfg)
    res = run_suite(policy, env, spec, cfgmod.mpc_config(cfg, env), cfg.model.kind, cfgmod.fit_config(cfg),
                    K, cfg.seed, tuple(spec.active), args.jobs)
    out = _out_dir(args, cfg)
    _write(out / "summary.csv", to_csv(res.summary_rows(),
                                       ("mode", "disturbance", "mean", "std_error", "episodes", "failed")))
    _write(out / "verification.csv", to_csv(res.verification_rows(),
                                            ("disturbance", "check", "pass_rate", "worst_slack", "episodes")))
    rows = []
    failures = []
    for dist, bundles in res.bundles.items():
        for b in bundles:
            if b.error:
                failures.append({"disturbance": dist, "episode": b.episode, "error": b.error})
            for mode, r in b.results.items():
                rows.append({"disturbance": dist, "episode": b.episode, "mode": mode,
                             "final_normalized": r.final_normalized, "value": r.value,
                             "baseline_value": r.baseline_value, "diverged": r.diverged})
    _write(out / "episodes.csv", to_csv(rows, ("disturbance", "episode", "mode", "final_normalized", "value",
                                               "baseline_value", "diverged")))
    _write(out / "config.yaml", cfgmod.echo(cfg))
    _write(out / "manifest.json", _manifest(cfg, "suite", {
        "episodes": K, "seed_table": _seed_table(cfg.seed, K), "failures": failures,
        "failure_count": len(failures)}))
    for row in res.summary_rows():
        print(f"{row['disturbance']:>14s} {row['mode']:>6s} {row['mean']:.4f} +- {row['std_error']:.4f}")
    return EXIT_OK


def cmd_sweep(args, cfg) -> int:
    env = cfgmod.build_env(cfg)
    policy = _policy(args, cfg, env)
    sw = cfg.sweep
    K = _episodes(args, cfg, sw.episodes)
    res = disturbance_sweep(policy, env, cfgmod.disturbance_spec(cfg), cfgmod.mpc_config(cfg, env),
                            cfg.model.kind, cfgmod.fit_config(cfg), sw.control_scales, sw.gammas, K, cfg.seed,
                            sw.hills and env.name == "car", args.jobs)
    out = _out_dir(args, cfg)
    _write(out / "sweep.csv", to_csv(res.cells, ("control_scale", "gamma", "mode", "mean", "std_error",
                                                 "episodes", "failed")))
    _write(out / "config.yaml", cfgmod.echo(cfg))
    _write(out / "sweep_manifest.json", _manifest(cfg, "sweep", {"episodes": K,
                                                                  "seed_table": _seed_table(cfg.seed, K)}))
    return EXIT_OK


def cmd_trend(args, cfg) -> int:
    env = cfgmod.build_env(cfg)
    policy = _policy(args, cfg, env)
    K = _episodes(args, cfg, cfg.trend.episodes)
    res = scaling_trend(policy, env, cfgmod.disturbance_spec(cfg), cfgmod.mpc_config(cfg, env), cfg.model.kind,
                        cfgmod.fit_config(cfg), cfg.trend.scales, K, cfg.seed, args.jobs)
    rows = [{"scale": r.scale, "mean_gap": r.mean_gap, "std_error": r.std_error, "episodes": r.episodes,
             "support_radius": r.radius} for r in res.rows]
    out = _out_dir(args, cfg)
    _write(out / "trend.csv", to_csv(rows, ("scale", "mean_gap", "std_error", "episodes", "support_radius")))
    _write(out / "config.yaml", cfgmod.echo(cfg))
    print(f"nondecreasing: {res.nondecreasing}; slope vs T*sqrt(radius): {res.slope:.4g}")
    return EXIT_OK


COMMANDS = {"train": cmd_train, "fit": cmd_fit, "run": cmd_run, "suite": cmd_suite,
            "sweep": cmd_sweep, "trend": cmd_trend}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="adapt", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", required=True, help="YAML experiment configuration")
        p.add_argument("--out", help="output file (train, fit) or directory (others)")
        if name != "train":
            p.add_argument("--policy", help="trained policy document; trained from the config if omitted")
        if name in ("run", "fit"):
            p.add_argument("--seed", type=int, default=0, help="episode index under the master seed")
        if name == "run":
            p.add_argument("--mode", required=True, help="ideal, naive or adapt")
        if name in ("suite", "sweep", "trend"):
            p.add_argument("--jobs", type=int, default=os.cpu_count() or 1)
            p.add_argument("--episodes", type=int, help="override the episode count")
    return parser


def main(argv=None) -> int:
    _setup_logging()
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_CONFIG if exc.code else EXIT_OK
    if getattr(args, "mode", None) is not None and args.mode not in ("ideal", "naive", "adapt"):
        print(f"error: unknown mode {args.mode!r}; expected ideal, naive or adapt", file=sys.stderr)
        return EXIT_CONFIG
    try:
        cfg = cfgmod.load_config(args.config)
    except ConfigurationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    try:
        return COMMANDS[args.command](args, cfg)
    except ArtifactError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_ARTIFACT
    except (ConfigurationError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
