"""Command-line entry point: ``gaclab <subcommand> [flags]``.

Exit codes: 0 completed, 1 I/O error, 2 usage error, 3 training diverged.
"""
from __future__ import annotations

import argparse
import ctypes
import logging
import os
import re
import shlex
import sys
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, replace

import numpy as np

from gaclab.agents import LOG_COLUMNS, GACAgent, GaussianSACAgent, TrainConfig
from gaclab.analysis.bench import bench_sampling
from gaclab.analysis.concentration import TABLE_KAPPAS, concentration_table
from gaclab.analysis.saturation import policy_saturation, tanh_saturation
from gaclab.envs import ENV_REGISTRY, make_env
from gaclab.harness.config import coerce_overrides, load_ablation, parse_float_list
from gaclab.harness.io import (
    RunManifest,
    manifest_section,
    read_csv,
    read_manifest,
    write_csv,
)
from gaclab.netcore import load_checkpoint, save_checkpoint
from gaclab.rng import substream

logger = logging.getLogger(__name__)

EXIT_OK, EXIT_IO, EXIT_USAGE, EXIT_DIVERGED = 0, 1, 2, 3

CONCENTRATION_COLUMNS = ("kappa", "weight", "concentration", "angle_std_deg", "n", "d", "seed")
EPISODE_COLUMNS = ("episode", "return", "length", "final_distance")
SATURATION_COLUMNS = ("source", "mean", "std", "threshold", "n", "mc_fraction",
                      "analytic_fraction", "mc_sigma")
BENCH_COLUMNS = ("sampler", "mode", "d", "kappa", "n", "time_per_sample",
                 "rejections_per_sample", "mean_resultant")
ABLATION_COLUMNS = ("kind", "variant", "seed", "n_runs", "status", "diverged_step",
                    "unbounded_action", "final_window_return", "final_window_return_std",
                    "eval_step_reward")
POLICIES = {"gac": GACAgent, "gaussian": GaussianSACAgent}
_DEFAULTS = TrainConfig()


def _default_out():
    return os.environ.get("GAC_OUT_DIR", "runs")


def _float_list(text):
    try:
        return parse_float_list(text)
    except ValueError:
        raise argparse.ArgumentTypeError(f"not a comma-separated list of numbers: {text!r}")


def _str_list(text):
    return [t.strip() for t in text.split(",") if t.strip()]


def build_parser():
    fmt = argparse.ArgumentDefaultsHelpFormatter
    parser = argparse.ArgumentParser(prog="gaclab", description=__doc__.splitlines()[0],
                                     formatter_class=fmt)
    parser.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = parser.add_subparsers(dest="command", required=True, metavar="subcommand")

    def common(p, seed=True):
        p.add_argument("--out", default=_default_out(),
                       help="output directory (default from GAC_OUT_DIR)")
        if seed:
            p.add_argument("--seed", type=int, default=0, help="root seed for all streams")

    p = sub.add_parser("validate-concentration", formatter_class=fmt,
                       help="mean cosine and angular spread of spherical mixing per kappa")
    common(p)
    p.add_argument("--dim", type=int, default=3, help="action dimension")
    p.add_argument("--samples", type=int, default=50_000, help="samples per kappa and seed")
    p.add_argument("--kappas", type=_float_list, default=list(TABLE_KAPPAS),
                   help="comma-separated concentration scores")
    p.add_argument("--n-seeds", type=int, default=1,
                   help="average over seeds seed, seed+1, ...")

    p = sub.add_parser("train", formatter_class=fmt, help="train one agent")
    common(p)
    _add_env_flags(p, required=True)
    _add_train_flags(p)
    p.add_argument("--policy", choices=sorted(POLICIES), default="gac", help="policy head")
    p.add_argument("--dump-trajectories", action="store_true",
                   help="write the evaluation rollouts to trajectories.csv")

    p = sub.add_parser("ablate", formatter_class=fmt, help="run a variant x seed sweep")
    common(p, seed=False)
    p.add_argument("config", help="ablation config file")
    p.add_argument("--jobs", type=int, default=1, help="parallel worker processes")

    p = sub.add_parser("saturation", formatter_class=fmt,
                       help="fraction of tanh inputs with vanishing gradient")
    common(p)
    p.add_argument("--mean", type=float, default=0.0, help="Gaussian mean")
    p.add_argument("--std", type=float, default=1.0, help="Gaussian standard deviation")
    p.add_argument("--threshold", type=_float_list, default=[0.05],
                   help="gradient threshold(s) on 1 - tanh^2")
    p.add_argument("--samples", type=int, default=1_000_000, help="Monte Carlo draws")
    p.add_argument("--from-log", default=None,
                   help="pre_squash.csv from a gaussian train run (replaces the synthetic source)")

    p = sub.add_parser("bench-sampling", formatter_class=fmt,
                       help="time spherical mixing against rejection vMF sampling")
    common(p)
    p.add_argument("--dim", type=int, default=17, help="dimension")
    p.add_argument("--kappas", type=_float_list, default=[0.0, 5.0, 10.0],
                   help="comma-separated concentrations")
    p.add_argument("--samples", type=int, default=3000, help="samples per timing repeat")
    p.add_argument("--modes", type=_str_list, default=["single", "batched"],
                   help="comma-separated modes from {single, batched}")
    p.add_argument("--repeats", type=int, default=5, help="timing repeats (median reported)")

    p = sub.add_parser("eval", formatter_class=fmt,
                       help="replay the deterministic evaluation of a trained run")
    common(p, seed=False)
    p.add_argument("--manifest", required=True, help="manifest.txt written by train")
    p.add_argument("--checkpoint", default=None,
                   help="checkpoint to load (default: the one named in the manifest)")
    return parser


def _add_env_flags(p, required):
    p.add_argument("--env", required=required, choices=sorted(ENV_REGISTRY), help="environment")
    p.add_argument("--dim", type=int, default=4, help="action dimension")
    p.add_argument("--r-star", type=float, default=1.0, help="shell radius (directional-shell)")
    p.add_argument("--eval-episodes", type=int, default=10,
                   help="deterministic evaluation episodes after training")


def _add_train_flags(p):
    d = _DEFAULTS
    p.add_argument("--steps", type=int, default=d.steps, help="environment steps")
    p.add_argument("--warmup", type=int, default=d.warmup, help="uniform-random steps first")
    p.add_argument("--radius", type=float, default=d.radius, help="action radius")
    p.add_argument("--gamma", type=float, default=d.gamma, help="discount")
    p.add_argument("--tau", type=float, default=d.tau, help="target update rate")
    p.add_argument("--batch-size", type=int, default=d.batch_size, help="replay batch size")
    p.add_argument("--actor-lr", type=float, default=d.actor_lr, help="actor Adam step size")
    p.add_argument("--critic-lr", type=float, default=d.critic_lr, help="critic Adam step size")
    p.add_argument("--alpha", type=float, default=d.alpha, help="entropy weight (gaussian only)")
    p.add_argument("--kappa-max", type=float, default=d.kappa_max,
                   help="bound on the concentration score used by the agent (inf: none)")
    p.add_argument("--buffer-size", type=int, default=d.buffer_size, help="replay capacity")
    p.add_argument("--hidden", type=int, default=d.hidden, help="hidden layer width")
    p.add_argument("--log-every", type=int, default=d.log_every, help="steps per CSV row")
    p.add_argument("--final-window", type=int, default=d.final_window,
                   help="episodes in the final-window summary")
    p.add_argument("--dtype", choices=("float32", "float64"), default=d.dtype,
                   help="training precision")
    p.add_argument("--no-kappa", action="store_true", help="fix the mixing weight at sigmoid(1)")
    p.add_argument("--no-normalize", action="store_true",
                   help="drop both normalizations from the action rule")


_NEGATIVE_VALUE = re.compile(r"^-\.?\d")


def _attach_negative_values(argv):
    # argparse reads "-2,-1" as an option; "--kappas=-2,-1" is unambiguous
    out = []
    for tok in argv:
        if (out and _NEGATIVE_VALUE.match(tok) and out[-1].startswith("--")
                and "=" not in out[-1]):
            out[-1] = f"{out[-1]}={tok}"
        else:
            out.append(tok)
    return out


def parse_cli(argv=None):
    """Parse ``argv``; argparse exits with status 2 on usage errors."""
    argv = sys.argv[1:] if argv is None else list(argv)
    return build_parser().parse_args(_attach_negative_values(argv))


# ---------------------------------------------------------------------------
# training runs (module level so worker processes can pickle them)

def config_from_args(args):
    return TrainConfig(
        gamma=args.gamma, tau=args.tau, batch_size=args.batch_size, actor_lr=args.actor_lr,
        critic_lr=args.critic_lr, radius=args.radius, steps=args.steps, warmup=args.warmup,
        alpha=args.alpha, no_kappa=args.no_kappa, no_normalize=args.no_normalize,
        kappa_max=args.kappa_max, seed=args.seed, buffer_size=args.buffer_size,
        hidden=args.hidden, log_every=args.log_every, final_window=args.final_window,
        dtype=args.dtype)


def build_agent(policy, config):
    return POLICIES[policy].from_config(config)


def trajectory_rows(trajectory):
    rows = []
    for ep, t, obs, act, rew in trajectory:
        row = {"episode": ep + 1, "t": t, "reward": rew}
        row.update({f"obs{i}": v for i, v in enumerate(np.asarray(obs).tolist())})
        row.update({f"act{i}": v for i, v in enumerate(np.asarray(act).tolist())})
        rows.append(row)
    return rows


def run_training(env_name, dim, r_star, policy, config, eval_episodes, out_dir,
                 dump_trajectories=False):
    """Train, evaluate and persist one run.

    Returns ``(report, results, outputs, checkpoint_path)``; the checkpoint is
    None when training diverged.
    """
    env = make_env(env_name, dim, r_star=r_star)
    agent = build_agent(policy, config)
    agent.fit(env)
    report = agent.report_
    outputs = {"train": os.path.join(out_dir, "train.csv"),
               "episodes": os.path.join(out_dir, "episodes.csv")}
    write_csv(outputs["train"], LOG_COLUMNS, report.rows)
    dists = report.episode_final_distances
    ep_rows = [{"episode": i + 1, "return": r, "length": n,
                "final_distance": dists[i] if i < len(dists) else None}
               for i, (r, n) in enumerate(zip(report.episode_returns, report.episode_lengths))]
    write_csv(outputs["episodes"], EPISODE_COLUMNS, ep_rows)
    if report.pre_squash is not None:
        outputs["pre_squash"] = os.path.join(out_dir, "pre_squash.csv")
        cols = [f"a{i}" for i in range(report.pre_squash.shape[1])]
        write_csv(outputs["pre_squash"], cols,
                  [dict(zip(cols, row)) for row in report.pre_squash.tolist()])
    results = {
        "status": report.status,
        "diverged_step": report.diverged_step,
        "steps_done": report.steps_done,
        "episodes": len(report.episode_returns),
        "final_window_return": report.final_window_return(),
        "final_window_step_reward": report.final_window_step_reward(),
        "final_window_distance": report.final_window_distance(),
        "max_action_norm": report.max_action_norm,
        "unbounded_action": report.unbounded_action,
    }
    checkpoint = None
    if not report.diverged:
        checkpoint = os.path.join(out_dir, "checkpoint.gacnet")
        save_checkpoint(checkpoint, agent.networks())
        if eval_episodes > 0:
            eval_env = make_env(env_name, dim, r_star=r_star)
            ev = agent.evaluate(eval_env, eval_episodes, substream(config.seed, "eval"),
                                record=dump_trajectories)
            if dump_trajectories:
                obs_dim, act_dim = eval_env.spec.observation_dim, eval_env.spec.action_dim
                cols = (["episode", "t"] + [f"obs{i}" for i in range(obs_dim)]
                        + [f"act{i}" for i in range(act_dim)] + ["reward"])
                outputs["trajectories"] = os.path.join(out_dir, "trajectories.csv")
                write_csv(outputs["trajectories"], cols, trajectory_rows(ev["trajectory"]))
            results["eval_return"] = ev["mean_return"]
            results["eval_step_reward"] = ev["step_reward"]
            if ev["final_distances"]:
                results["eval_final_distance"] = float(np.mean(ev["final_distances"]))
    return report, results, outputs, checkpoint


def _ablation_worker(job):
    variant, seed, plan_env, out_dir = job
    env_name, dim, r_star, eval_episodes = plan_env
    cfg = replace(TrainConfig(**variant.overrides), seed=seed)
    run_dir = os.path.join(out_dir, "runs", f"{variant.name}-seed{seed}")
    os.makedirs(run_dir, exist_ok=True)
    report, results, outputs, _ = run_training(env_name, dim, r_star, "gac", cfg,
                                               eval_episodes, run_dir)
    return variant.name, seed, results, outputs["train"]


# ---------------------------------------------------------------------------
# subcommands

def _cmd_validate_concentration(args, manifest):
    rows_by_seed = []
    for i in range(args.n_seeds):
        rng = substream(args.seed + i, "concentration")
        rows_by_seed.append(concentration_table(args.kappas, args.dim, args.samples, rng))
    rows = []
    for j, kappa in enumerate(args.kappas):
        per = [r[j] for r in rows_by_seed]
        rows.append({
            "kappa": float(kappa),
            "weight": per[0].weight,
            "concentration": float(np.mean([r.measured_concentration for r in per])),
            "angle_std_deg": float(np.mean([r.angle_std_deg for r in per])),
            "n": args.samples * args.n_seeds,
            "d": args.dim,
            "seed": args.seed,
        })
    path = os.path.join(args.out, "concentration.csv")
    write_csv(path, CONCENTRATION_COLUMNS, rows)
    manifest.outputs["concentration"] = path
    for r in rows:
        print(f"kappa={r['kappa']:+.2f}  w={r['weight']:.3f}  "
              f"cos={r['concentration']:.3f}  std={r['angle_std_deg']:.2f} deg")
    return EXIT_OK


def _cmd_train(args, manifest):
    cfg = config_from_args(args)
    manifest.config.update({"env": args.env, "dim": args.dim, "r_star": args.r_star,
                            "policy": args.policy, "eval_episodes": args.eval_episodes})
    manifest.config.update(asdict(cfg))
    report, results, outputs, checkpoint = run_training(
        args.env, args.dim, args.r_star, args.policy, cfg, args.eval_episodes, args.out,
        dump_trajectories=args.dump_trajectories)
    manifest.results.update(results)
    manifest.outputs.update(outputs)
    if checkpoint:
        manifest.checkpoints["policy"] = checkpoint
    print(f"status={report.status} steps={report.steps_done} "
          f"final_window_return={results['final_window_return']:.4f}")
    if report.diverged:
        print(f"diverged at step {report.diverged_step}")
        return EXIT_DIVERGED
    if report.unbounded_action:
        print(f"unbounded action norm {report.max_action_norm:.4g} > radius {cfg.radius}")
    return EXIT_OK


def _cmd_ablate(args, manifest):
    plan = load_ablation(args.config)
    manifest.config.update({"config_file": args.config, "env": plan.env, "dim": plan.dim,
                            "r_star": plan.r_star, "eval_episodes": plan.eval_episodes,
                            "seeds": ",".join(map(str, plan.seeds)), "jobs": args.jobs})
    for v in plan.variants:
        for k, val in v.overrides.items():
            manifest.config[f"variant.{v.name}.{k}"] = val
    plan_env = (plan.env, plan.dim, plan.r_star, plan.eval_episodes)
    jobs = [(v, s, plan_env, args.out) for v, s in plan.runs()]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            done = list(pool.map(_ablation_worker, jobs))
    else:
        done = [_ablation_worker(j) for j in jobs]

    rows = []
    for name, seed, res, train_path in done:
        manifest.outputs[f"train.{name}.seed{seed}"] = train_path
        rows.append({"kind": "run", "variant": name, "seed": seed, "n_runs": 1,
                     "status": res["status"], "diverged_step": res["diverged_step"],
                     "unbounded_action": res["unbounded_action"],
                     "final_window_return": res["final_window_return"],
                     "eval_step_reward": res.get("eval_step_reward")})
    for v in plan.variants:
        mine = [r for r in rows if r["kind"] == "run" and r["variant"] == v.name]
        finals = np.array([r["final_window_return"] for r in mine], dtype=float)
        evals = np.array([np.nan if r["eval_step_reward"] is None else r["eval_step_reward"]
                          for r in mine], dtype=float)
        n_ok = sum(r["status"] == "completed" for r in mine)
        rows.append({
            "kind": "aggregate", "variant": v.name, "n_runs": len(mine),
            "status": f"{n_ok}/{len(mine)} completed",
            "unbounded_action": any(r["unbounded_action"] for r in mine),
            "final_window_return": float(finals.mean()),
            "final_window_return_std": float(finals.std(ddof=1)) if len(finals) > 1 else 0.0,
            "eval_step_reward": float(evals.mean()),
        })
    path = os.path.join(args.out, "ablation.csv")
    write_csv(path, ABLATION_COLUMNS, rows)
    manifest.outputs["ablation"] = path
    manifest.results["runs"] = len(done)
    manifest.results["diverged_runs"] = sum(r["status"] == "diverged" for r in rows
                                            if r["kind"] == "run")
    for r in rows:
        if r["kind"] == "aggregate":
            print(f"{r['variant']}: {r['final_window_return']:.4f} "
                  f"+/- {r['final_window_return_std']:.4f} ({r['status']})")
    return EXIT_OK


def _read_pre_squash(path):
    rows = read_csv(path)
    if not rows:
        return np.empty(0)
    return np.array([[float(v) for v in r.values()] for r in rows]).ravel()


def _cmd_saturation(args, manifest):
    rows = []
    for thr in args.threshold:
        if args.from_log:
            rep = policy_saturation(_read_pre_squash(args.from_log), thr)
            mean = std = None
        else:
            rep = tanh_saturation(args.mean, args.std, thr, args.samples,
                                  substream(args.seed, "saturation"))
            mean, std = args.mean, args.std
        rows.append({"source": rep.source, "mean": mean, "std": std, "threshold": thr,
                     "n": rep.n, "mc_fraction": rep.mc_fraction,
                     "analytic_fraction": rep.analytic_fraction, "mc_sigma": rep.mc_sigma()})
        analytic = ("n/a" if rep.analytic_fraction is None
                    else f"{rep.analytic_fraction:.5f}")
        print(f"threshold={thr}: mc={rep.mc_fraction:.5f} analytic={analytic}")
    path = os.path.join(args.out, "saturation.csv")
    write_csv(path, SATURATION_COLUMNS, rows)
    manifest.outputs["saturation"] = path
    return EXIT_OK


def _cmd_bench(args, manifest):
    bad = [m for m in args.modes if m not in ("single", "batched")]
    if bad:
        raise _UsageError(f"unknown mode {bad[0]!r}")
    rows = bench_sampling(args.dim, args.kappas, args.samples, substream(args.seed, "bench"),
                          modes=tuple(args.modes), repeats=args.repeats)
    path = os.path.join(args.out, "vmf_bench.csv")
    write_csv(path, BENCH_COLUMNS, [asdict(r) for r in rows])
    manifest.outputs["vmf_bench"] = path
    for r in rows:
        print(f"{r.sampler:>4} {r.mode:>7} kappa={r.kappa:<5g} "
              f"{r.time_per_sample * 1e6:8.2f} us/sample  rej={r.rejections_per_sample:.3f}")
    return EXIT_OK


def agent_from_manifest(entries, checkpoint=None):
    """Rebuild a fitted agent and its env settings from manifest entries."""
    conf = manifest_section(entries, "config")
    cfg = TrainConfig(**coerce_overrides({k: v for k, v in conf.items()
                                          if k in TrainConfig.__dataclass_fields__}))
    env_name, dim, r_star = conf["env"], int(conf["dim"]), float(conf["r_star"])
    path = checkpoint or entries.get("checkpoint.policy")
    if not path:
        raise FileNotFoundError("manifest names no checkpoint")
    agent = build_agent(conf.get("policy", "gac"), cfg)
    env = make_env(env_name, dim, r_star=r_star)
    agent.load_networks(env.spec, load_checkpoint(path, dtype=cfg.dtype))
    return agent, cfg, (env_name, dim, r_star), int(conf.get("eval_episodes", 10))


def _cmd_eval(args, manifest):
    entries = read_manifest(args.manifest)
    agent, cfg, (env_name, dim, r_star), episodes = agent_from_manifest(entries, args.checkpoint)
    ev = agent.evaluate(make_env(env_name, dim, r_star=r_star), episodes,
                        substream(cfg.seed, "eval"))
    manifest.seed = cfg.seed
    manifest.config.update({"source_manifest": args.manifest, "episodes": episodes})
    manifest.results["eval_return"] = ev["mean_return"]
    manifest.results["eval_step_reward"] = ev["step_reward"]
    recorded = entries.get("result.eval_return")
    if recorded is not None:
        manifest.results["recorded_eval_return"] = float(recorded)
        manifest.results["matches_recorded"] = float(recorded) == ev["mean_return"]
    path = os.path.join(args.out, "eval.csv")
    write_csv(path, ("episode", "return", "length"),
              [{"episode": i + 1, "return": r, "length": n}
               for i, (r, n) in enumerate(zip(ev["returns"], ev["lengths"]))])
    manifest.outputs["eval"] = path
    print(f"eval_return={ev['mean_return']!r} recorded={recorded}")
    return EXIT_OK


class _UsageError(Exception):
    pass


COMMANDS = {
    "validate-concentration": _cmd_validate_concentration,
    "train": _cmd_train,
    "ablate": _cmd_ablate,
    "saturation": _cmd_saturation,
    "bench-sampling": _cmd_bench,
    "eval": _cmd_eval,
}


def run(args, argv=None):
    """Execute a parsed command; returns the process exit code."""
    argv = sys.argv[1:] if argv is None else argv
    try:
        os.makedirs(args.out, exist_ok=True)
    except OSError as exc:
        print(f"gaclab: cannot create output directory {args.out!r}: {exc}", file=sys.stderr)
        return EXIT_IO
    manifest = RunManifest(command=shlex.join(["gaclab", *argv]), subcommand=args.command,
                           seed=getattr(args, "seed", 0))
    manifest.config.update({k: v for k, v in vars(args).items()
                            if k not in ("command", "verbose") and not isinstance(v, list)})
    manifest.config.update({k: ",".join(map(str, v)) for k, v in vars(args).items()
                            if isinstance(v, list)})
    code = EXIT_IO
    try:
        code = COMMANDS[args.command](args, manifest)
    except (_UsageError, KeyError, ValueError) as exc:
        # bad flag values or config-file content
        print(f"gaclab: {exc}", file=sys.stderr)
        code = EXIT_USAGE
    except OSError as exc:
        print(f"gaclab: {type(exc).__name__}: {exc}", file=sys.stderr)
        code = EXIT_IO
    finally:
        manifest.results.setdefault("exit_code", code)
        try:
            manifest.write(os.path.join(args.out, "manifest.txt"))
        except OSError as exc:
            print(f"gaclab: cannot write manifest: {exc}", file=sys.stderr)
            code = EXIT_IO
    return code


def _tune_allocator():
    """Keep glibc from returning activation-sized blocks to the OS after every free.

    Training allocates and frees many ~256 KB arrays per step; above the
    default mmap threshold each one costs fresh page faults. Best effort.
    """
    if not sys.platform.startswith("linux"):
        return
    try:
        libc = ctypes.CDLL("libc.so.6")
        m_trim_threshold, m_mmap_threshold = -1, -3
        libc.mallopt(m_mmap_threshold, 64 << 20)
        libc.mallopt(m_trim_threshold, 128 << 20)
    except (OSError, AttributeError):
        pass


def main(argv=None):
    argv = sys.argv[1:] if argv is None else list(argv)
    args = parse_cli(argv)
    _tune_allocator()
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return run(args, argv)


if __name__ == "__main__":
    sys.exit(main())
