"""``dvelab`` command suite: train / bench / analyze / env.

Every run lands in its own directory under ``--out`` (or ``$DVE_LAB_OUT``,
default ``./runs``): a manifest, the fully resolved config, the per-update
training CSV, and the final checkpoint.  Identical seeded invocations
produce byte-identical primary CSVs.

Exit codes: 0 success, 2 usage/config error, 3 runtime error.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import subprocess
import sys
import time
import uuid
from dataclasses import replace
from pathlib import Path

import numpy as np

from . import __version__, envkit
from .analysis import (aic, baseline_variance_scan, bellman_residual,
                       critic_state_values, enumerate_pool,
                       exact_state_values, export_cluster_assignments,
                       fit_gmm, navigation_efficiency,
                       policy_gradient_enumerate, select_clusters,
                       stock_toy_pool, variance_decomposition,
                       write_cluster_csv, CLUSTER_COLUMNS)
from .config import (apply_overrides, build_train_config, parse_config_file,
                     resolved_config_text)
from .envkit import EnvConfig, Family, generate_scene, make_pool, render_ascii
from .errors import ConfigError, DvelabError
from .netcore import init_params, load_checkpoint, save_checkpoint
from .rng import stream
from .trainer import CriticMode, TrainConfig, csv_columns, train

MODES = [m.value for m in CriticMode]


# ---------------------------------------------------------------------------
# Run directories and manifests.

def _out_root(args) -> Path:
    if getattr(args, "out", None):
        return Path(args.out)
    return Path(os.environ.get("DVE_LAB_OUT", "runs"))


def _new_run_dir(root: Path, label: str) -> Path:
    """A fresh directory per run; never reuses (and so never mutates) an
    existing one."""
    root.mkdir(parents=True, exist_ok=True)
    while True:
        run_id = f"{label}-{time.strftime('%Y%m%d-%H%M%S')}-{uuid.uuid4().hex[:6]}"
        path = root / run_id
        try:
            path.mkdir()
            return path
        except FileExistsError:
            continue


def _build_id() -> str:
    try:
        out = subprocess.run(["git", "describe", "--always", "--dirty"],
                             capture_output=True, text=True, timeout=5,
                             cwd=Path(__file__).parent)
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    return f"dvelab-{__version__}"


def _atomic_write(path: Path, text: str) -> None:
    tmp = path.with_name(path.name + ".tmp")
    tmp.write_text(text)
    os.replace(tmp, path)


def _write_manifest(run_dir: Path, manifest: dict) -> None:
    _atomic_write(run_dir / "manifest.json",
                  json.dumps(manifest, indent=1, sort_keys=True) + "\n")


def _fmt(value) -> str:
    if isinstance(value, float):
        return f"{value:.17g}"
    return str(value)


def _write_csv(path: Path, columns: list[str], rows: list[dict]) -> None:
    """RFC-4180 CSV with floats at 17 significant digits."""
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(row[c]) for c in columns])


def _read_csv(path: Path) -> list[dict]:
    with open(path, newline="") as fh:
        return list(csv.DictReader(fh))


# ---------------------------------------------------------------------------
# train

def _load_config(args) -> tuple[TrainConfig, dict]:
    mapping: dict[str, str] = {}
    if getattr(args, "config", None):
        mapping = parse_config_file(args.config)
    mapping = apply_overrides(mapping, getattr(args, "set", None))
    if getattr(args, "mode", None):
        mapping["mode"] = args.mode
    if getattr(args, "seed", None) is not None:
        mapping["seed"] = str(args.seed)
    return build_train_config(mapping)


def _run_training(cfg: TrainConfig, extras: dict, run_dir: Path) -> dict:
    manifest = {
        "run_id": run_dir.name,
        "build_id": _build_id(),
        "seed": cfg.seed,
        "mode": cfg.critic_mode.value,
        "started": time.strftime("%Y-%m-%dT%H:%M:%S"),
        "finished": None,
        "artifacts": ["config.resolved", "train_log.csv",
                      "final.ckpt", "final.ckpt.json"],
    }
    _write_manifest(run_dir, manifest)
    _atomic_write(run_dir / "config.resolved", resolved_config_text(cfg, extras))

    pool = make_pool(cfg.env, extras["pool_seed"])
    report = train(cfg, pool)
    _write_csv(run_dir / "train_log.csv", csv_columns(cfg.n_b), report.rows)
    save_checkpoint(run_dir / "final.ckpt", report.params, report.spec)

    manifest["finished"] = time.strftime("%Y-%m-%dT%H:%M:%S")
    _write_manifest(run_dir, manifest)
    return {"run_dir": run_dir, "report": report}


def cmd_train(args) -> int:
    cfg, extras = _load_config(args)
    run_dir = _new_run_dir(_out_root(args), f"train-{cfg.critic_mode.value}")
    result = _run_training(cfg, extras, run_dir)
    rows = result["report"].rows
    final = rows[-1] if rows else {}
    print(f"run: {run_dir}")
    if final:
        print(f"final mean_reward={final['mean_reward']:.4f} "
              f"nav_efficiency={final['nav_efficiency']:.6f}")
    return 0


# ---------------------------------------------------------------------------
# bench

BENCH_COLUMNS = ["mode", "seeds", "reward_mean", "reward_std",
                 "nav_eff_mean", "nav_eff_std", "ep_len_mean"]


def _tail_summary(rows: list[dict], k: int = 10) -> tuple[float, float, float]:
    """(reward, nav_efficiency, ep_len) averaged over the final k updates."""
    tail = rows[-k:]
    reward = float(np.mean([float(r["mean_reward"]) for r in tail]))
    ep_len = float(np.mean([float(r["mean_ep_len"]) for r in tail]))
    return reward, navigation_efficiency(tail), ep_len


def cmd_bench(args) -> int:
    cfg, extras = _load_config(args)
    modes = [CriticMode(m.strip()) for m in args.modes.split(",") if m.strip()]
    seeds = list(range(args.seeds))
    bench_dir = _new_run_dir(_out_root(args), "bench")
    table = []
    for mode in modes:
        rewards, navs, lens = [], [], []
        for seed_off in seeds:
            run_cfg = replace(cfg, critic_mode=mode, seed=cfg.seed + seed_off)
            run_dir = bench_dir / f"{mode.value}-seed{run_cfg.seed}"
            run_dir.mkdir()
            _run_training(run_cfg, dict(extras, pool_seed=extras["pool_seed"]),
                          run_dir)
            rows = _read_csv(run_dir / "train_log.csv")
            reward, nav, ep_len = _tail_summary(rows)
            rewards.append(reward)
            navs.append(nav)
            lens.append(ep_len)
        table.append({
            "mode": mode.value, "seeds": len(seeds),
            "reward_mean": float(np.mean(rewards)),
            "reward_std": float(np.std(rewards)),
            "nav_eff_mean": float(np.mean(navs)),
            "nav_eff_std": float(np.std(navs)),
            "ep_len_mean": float(np.mean(lens)),
        })
    _write_csv(bench_dir / "bench_table.csv", BENCH_COLUMNS, table)
    print(f"bench: {bench_dir}")
    header = f"{'mode':<12} {'reward':>16} {'nav_eff':>18} {'ep_len':>8}"
    print(header)
    for row in table:
        print(f"{row['mode']:<12} "
              f"{row['reward_mean']:>8.3f} ±{row['reward_std']:<6.3f} "
              f"{row['nav_eff_mean']:>9.5f} ±{row['nav_eff_std']:<7.5f} "
              f"{row['ep_len_mean']:>8.2f}")
    return 0


# ---------------------------------------------------------------------------
# analyze

def _load_run(run_dir: Path):
    cfg, extras = build_train_config(
        parse_config_file(run_dir / "config.resolved"))
    params, spec = load_checkpoint(run_dir / "final.ckpt")
    return cfg, extras, params, spec


def _analyze_out(args, label: str) -> Path:
    return _new_run_dir(_out_root(args), f"analyze-{label}")


def cmd_analyze_values(args) -> int:
    run_dir = Path(args.run)
    cfg, extras, params, spec = _load_run(run_dir)
    pool = make_pool(cfg.env, extras["pool_seed"])
    if args.scene_id is not None:
        pool = [s for s in pool if s.scene_id == args.scene_id]
        if not pool:
            raise ConfigError(f"no scene with id {args.scene_id}")
    out = _analyze_out(args, "values")
    rows = []
    worst = 0.0
    for scene in pool:
        res = exact_state_values(scene, params, spec, cfg.env)
        worst = max(worst, bellman_residual(res, scene, cfg.env))
        for (pos, claimed), v in sorted(res.values.items(), key=repr):
            rows.append({"scene_id": scene.scene_id, "y": pos[0], "x": pos[1],
                         "n_claimed": len(claimed), "value": v})
    _write_csv(out / "values.csv", ["scene_id", "y", "x", "n_claimed", "value"],
               rows)
    summary = {"n_scenes": len(pool), "n_states": len(rows),
               "max_bellman_residual": worst}
    _atomic_write(out / "summary.json", json.dumps(summary, indent=1) + "\n")
    print(f"values: {out} ({len(rows)} states, "
          f"max residual {worst:.3e})")
    return 0


def _samples_from_args(args) -> np.ndarray:
    if args.samples:
        data = np.loadtxt(args.samples, delimiter=",", ndmin=1)
        return np.asarray(data, dtype=np.float64).reshape(-1)
    if not args.run:
        raise ConfigError("need --samples FILE or --run DIR")
    run_dir = Path(args.run)
    cfg, extras, params, spec = _load_run(run_dir)
    pool = make_pool(cfg.env, extras["pool_seed"])
    values = []
    for scene in pool:
        res = exact_state_values(scene, params, spec, cfg.env)
        values.append(res.values[(scene.start, frozenset())])
    return np.asarray(values)


def cmd_analyze_aic(args) -> int:
    samples = _samples_from_args(args)
    c_star, models, aics = select_clusters(samples, (args.cmin, args.cmax),
                                           seed=args.seed)
    out = _analyze_out(args, "aic")
    rows = [{"C": c, "aic": float(a), "aic_per_sample": float(a) / len(samples),
             "log_likelihood": m.log_likelihood}
            for c, m, a in zip(range(args.cmin, args.cmax + 1), models, aics)]
    _write_csv(out / "aic_curve.csv",
               ["C", "aic", "aic_per_sample", "log_likelihood"], rows)
    summary = {"c_star": c_star, "n_samples": int(len(samples))}
    _atomic_write(out / "summary.json", json.dumps(summary, indent=1) + "\n")
    print(f"aic: {out} C*={c_star}")
    return 0


def cmd_analyze_gmm(args) -> int:
    samples = _samples_from_args(args)
    model = fit_gmm(samples, args.components, seed=args.seed)
    out = _analyze_out(args, "gmm")
    rows = [{"component": i, "weight": float(model.weights[i]),
             "mean": float(model.means[i]),
             "variance": float(model.variances[i])}
            for i in range(model.n_components)]
    _write_csv(out / "gmm.csv", ["component", "weight", "mean", "variance"],
               rows)
    summary = {"log_likelihood": model.log_likelihood,
               "aic": aic(model, len(samples)), "iters": model.iters}
    _atomic_write(out / "summary.json", json.dumps(summary, indent=1) + "\n")
    print(f"gmm: {out} ll={model.log_likelihood:.4f}")
    return 0


def cmd_analyze_varstudy(args) -> int:
    pool, env_cfg = stock_toy_pool()
    spec, params = _toy_snapshot(args.seed, env_cfg)
    enum = enumerate_pool(pool, params, spec, env_cfg)
    samples = enum.weighted_q_samples()
    oracle = enum.oracle_values

    critic = {}
    for scene in pool:
        table = critic_state_values(scene, params, spec, env_cfg)
        for key, v in table.items():
            critic[(scene.scene_id, key)] = v

    def critic_predictor(sid, key):
        # States reached only off the most-probable support fall back to the
        # oracle (they carry negligible weight on this pool).
        return critic.get((sid, key), oracle[(sid, key)])

    predictors = [("oracle", lambda sid, key: oracle[(sid, key)]),
                  ("network_critic", critic_predictor)]
    rows = []
    for name, fn in predictors:
        rep = variance_decomposition(samples, fn, oracle)
        rows.append({"predictor": name, "total_variance": rep.total_variance,
                     "minimal_variance": rep.minimal_variance,
                     "prediction_error": rep.prediction_error,
                     "cross_term": rep.cross_term})
    out = _analyze_out(args, "varstudy")
    _write_csv(out / "varstudy.csv",
               ["predictor", "total_variance", "minimal_variance",
                "prediction_error", "cross_term"], rows)
    print(f"varstudy: {out}")
    for row in rows:
        print(f"  {row['predictor']:<16} total={row['total_variance']:.6f} "
              f"minimal={row['minimal_variance']:.6f} "
              f"pred_err={row['prediction_error']:.6f} "
              f"cross={row['cross_term']:.2e}")
    return 0


def _toy_snapshot(seed: int, env_cfg: EnvConfig):
    from .netcore import NetSpec
    spec = NetSpec(input_dim=env_cfg.obs_dim, trunk=(16,), hidden=16,
                   heads={"policy": 4, "value": 1})
    params = init_params(spec, stream(seed, "init"))
    params.view("head.policy.W")[...] = stream(seed, "toy.policy").normal(
        0.0, 0.3, params.view("head.policy.W").shape)
    return spec, params


def cmd_analyze_lemma_check(args) -> int:
    pool, env_cfg = stock_toy_pool()
    spec, params = _toy_snapshot(args.seed, env_cfg)
    enum = enumerate_pool(pool, params, spec, env_cfg)

    rng = stream(args.seed, "lemma.baselines")
    tables = [{g: float(rng.normal(0.0, 5.0)) for g in enum.oracle_values}
              for _ in range(args.n_baselines)]
    fns = [lambda sid, key: 0.0]
    fns += [(lambda t: (lambda sid, key: t[(sid, key)]))(t) for t in tables]
    fns.append(lambda sid, key: enum.oracle_values[(sid, key)])
    grads = policy_gradient_enumerate(pool, params, spec, env_cfg, fns,
                                      enum=enum)
    deviation = float(np.abs(grads[1:] - grads[0]).max())

    scan = baseline_variance_scan(pool, params, spec, env_cfg, enum=enum,
                                  seed=args.seed)
    margin = float(scan.curve.min() - scan.variance_at_oracle)
    generic_gap = float(scan.variance_scene_generic - scan.variance_at_oracle)

    print(f"lemma 1: max gradient deviation over {args.n_baselines} random "
          f"baselines = {deviation:.3e}")
    print(f"lemma 2: min perturbed-baseline margin = {margin:.3e}; "
          f"scene-generic gap = {generic_gap:.6f}")
    summary = {"max_gradient_deviation": deviation,
               "perturbation_margin": margin,
               "scene_generic_gap": generic_gap,
               "n_trajectories": enum.n_trajectories}
    out = _analyze_out(args, "lemma")
    _atomic_write(out / "summary.json", json.dumps(summary, indent=1) + "\n")
    ok = deviation < 1e-10 and margin > 0.0 and generic_gap > 0.0
    if not ok:
        print("lemma check FAILED", file=sys.stderr)
        return 3
    return 0


def cmd_analyze_clusters(args) -> int:
    run_dir = Path(args.run)
    cfg, extras, params, spec = _load_run(run_dir)
    pool = make_pool(cfg.env, extras["pool_seed"])
    rows = export_cluster_assignments(params, spec, pool, cfg.env,
                                      n_episodes=args.episodes,
                                      seed=args.seed)
    out = _analyze_out(args, "clusters")
    write_cluster_csv(rows, out / "clusters.csv")
    n_amb = sum(r["ambiguous"] for r in rows)
    print(f"clusters: {out} ({len(rows)} states, {n_amb} ambiguous)")
    return 0


# ---------------------------------------------------------------------------
# env

def cmd_env_show(args) -> int:
    cfg = EnvConfig(width=args.width, height=args.height,
                    t_max=max(64, args.width + args.height))
    scene = generate_scene(args.seed, Family(args.family), cfg)
    print(render_ascii(scene))
    print(json.dumps(envkit.scene_to_json(scene), indent=1, sort_keys=True))
    return 0


# ---------------------------------------------------------------------------
# parser

def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="dvelab",
        description="Multi-scene RL laboratory: sparse-attention dynamic "
                    "value estimation.")
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p):
        p.add_argument("--config", help="flat key=value config file")
        p.add_argument("--set", action="append", metavar="KEY=VALUE",
                       help="override one config key")
        p.add_argument("--out", help="output root (default $DVE_LAB_OUT or ./runs)")
        p.add_argument("--seed", type=int, help="training seed override")

    p_train = sub.add_parser("train", help="run one PPO training job")
    common(p_train)
    p_train.add_argument("--mode", choices=MODES, help="critic configuration")
    p_train.set_defaults(func=cmd_train)

    p_bench = sub.add_parser("bench", help="modes x seeds comparison table")
    common(p_bench)
    p_bench.add_argument("--modes", default=",".join(MODES),
                         help="comma-separated critic modes")
    p_bench.add_argument("--seeds", type=int, default=4,
                         help="seeds per mode (base seed + offset)")
    p_bench.set_defaults(func=cmd_bench)

    p_an = sub.add_parser("analyze", help="oracle and verification suite")
    an_sub = p_an.add_subparsers(dest="subcommand", required=True)

    p_values = an_sub.add_parser("values", help="exact per-scene state values")
    p_values.add_argument("--run", required=True, help="training run directory")
    p_values.add_argument("--scene-id", type=int)
    p_values.add_argument("--out")
    p_values.set_defaults(func=cmd_analyze_values)

    p_aic = an_sub.add_parser("aic", help="AIC curve over component counts")
    p_aic.add_argument("--samples", help="CSV/text file of scalar samples")
    p_aic.add_argument("--run", help="training run directory (start-state values)")
    p_aic.add_argument("--cmin", type=int, default=1)
    p_aic.add_argument("--cmax", type=int, default=8)
    p_aic.add_argument("--seed", type=int, default=0)
    p_aic.add_argument("--out")
    p_aic.set_defaults(func=cmd_analyze_aic)

    p_gmm = an_sub.add_parser("gmm", help="fit one Gaussian mixture")
    p_gmm.add_argument("--samples")
    p_gmm.add_argument("--run")
    p_gmm.add_argument("--components", type=int, default=3)
    p_gmm.add_argument("--seed", type=int, default=0)
    p_gmm.add_argument("--out")
    p_gmm.set_defaults(func=cmd_analyze_gmm)

    p_var = an_sub.add_parser("varstudy", help="three-term variance table")
    p_var.add_argument("--seed", type=int, default=0)
    p_var.add_argument("--out")
    p_var.set_defaults(func=cmd_analyze_varstudy)

    p_lemma = an_sub.add_parser("lemma-check",
                                help="baseline-invariance and minimality checks")
    p_lemma.add_argument("--seed", type=int, default=0)
    p_lemma.add_argument("--n-baselines", type=int, default=20)
    p_lemma.add_argument("--out")
    p_lemma.set_defaults(func=cmd_analyze_lemma_check)

    p_clu = an_sub.add_parser("clusters", help="per-state cluster assignments")
    p_clu.add_argument("--run", required=True)
    p_clu.add_argument("--episodes", type=int, default=32)
    p_clu.add_argument("--seed", type=int, default=0)
    p_clu.add_argument("--out")
    p_clu.set_defaults(func=cmd_analyze_clusters)

    p_env = sub.add_parser("env", help="environment utilities")
    env_sub = p_env.add_subparsers(dest="subcommand", required=True)
    p_show = env_sub.add_parser("show", help="render one generated scene")
    p_show.add_argument("--seed", type=int, default=0)
    p_show.add_argument("--family", choices=[f.value for f in Family],
                        default="maze")
    p_show.add_argument("--width", type=int, default=8)
    p_show.add_argument("--height", type=int, default=8)
    p_show.set_defaults(func=cmd_env_show)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return 2 if exc.code not in (0, None) else int(exc.code or 0)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except DvelabError as exc:
        print(f"runtime error: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    except OSError as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
