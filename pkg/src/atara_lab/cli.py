"""Command-line entry point: ``atara-lab <stage> [options]``."""

from __future__ import annotations

import argparse
import json
import sys
import time
from pathlib import Path

import numpy as np

from .config import ConfigError, RunConfig

EXIT_OK = 0
EXIT_FAILURE = 1
EXIT_CONFIG = 2
EXIT_DIVERGED = 3
EXIT_RESOLUTION = 4


def _non_negative(text: str) -> int:
    v = int(text)
    if v < 0:
        raise argparse.ArgumentTypeError(f"expected a non-negative integer, got {text}")
    return v


def _positive(text: str) -> int:
    v = int(text)
    if v <= 0:
        raise argparse.ArgumentTypeError(f"expected a positive integer, got {text}")
    return v


def _load(args, overrides: dict | None = None) -> RunConfig:
    over = dict(overrides or {})
    if args.seed is not None:
        over["seed"] = args.seed
    return RunConfig.load(args.config, over)


def _write_json(path: Path, data) -> Path:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(data, indent=1, sort_keys=True))
    return path


def _cameras(cfg: RunConfig):
    from .renderer import default_cameras

    return default_cameras(int(cfg["generation"]["image_size"]))


def _scene(cfg: RunConfig):
    from .renderer import SceneConfig

    return SceneConfig(clutter_seed=cfg["generation"]["clutter_seed"])


# ---------------------------------------------------------------- stages


def cmd_train_rl(args) -> int:
    from .atara.reach import TrainingDiverged, train_reach_policy
    from .kinematics import LEFT_WORKSPACE, RIGHT_WORKSPACE

    cfg = _load(args, {"rl": {"budget": args.budget}} if args.budget is not None else None)
    chains = cfg.chains()
    out = Path(args.out)
    cfg.snapshot(out)
    budget = int(cfg["rl"]["budget"])
    for side, chain, ws in (("left", chains[0], LEFT_WORKSPACE), ("right", chains[1], RIGHT_WORKSPACE)):
        path = out / f"policy_{side}.pt"

        def log(entry, side=side):
            if args.verbose:
                print(f"[{side}] iter {entry['iteration']} steps {entry['env_steps']} "
                      f"err {entry['mean_final_error']:.4f}", file=sys.stderr)

        t0 = time.perf_counter()
        try:
            pol = train_reach_policy(chain, ws, cfg.ppo(), budget, cfg.seed, cfg.env(), log, save_path=path)
        except TrainingDiverged as exc:
            _write_json(out / f"divergence_{side}.json", {"reason": exc.report.reason, "iterations": exc.report.iterations})
            print(f"error: {side} reach policy diverged: {exc.report.reason}", file=sys.stderr)
            return EXIT_DIVERGED
        report = pol.meta["report"]
        # wall time lives beside the checkpoint so the checkpoint itself stays reproducible
        _write_json(out / f"training_{side}.log.json", {"env_steps": report["env_steps"],
                                                         "iterations": report["iterations"],
                                                         "wall_time": time.perf_counter() - t0})
        print(f"saved {path}")
    return EXIT_OK


def _load_policies(policy_dir: Path, chains):
    from .atara.reach import load_policy

    pols = []
    for side, chain in zip(("left", "right"), chains):
        path = policy_dir / f"policy_{side}.pt"
        if not path.exists():
            raise ConfigError(f"missing policy checkpoint {path}")
        pol = load_policy(path)
        if pol.meta.get("chain_hash") not in (None, chain.content_hash()):
            raise ConfigError(f"{path} was trained on a different {side} chain")
        pols.append(pol)
    return tuple(pols)


def cmd_gen_data(args) -> int:
    from .atara.dataset import DatasetWriteError, generate_dataset

    over = {"generation": {"steps": args.steps}} if args.steps is not None else {}
    if args.workers is not None:
        over.setdefault("generation", {})["workers"] = args.workers
    cfg = _load(args, over)
    chains = cfg.chains()
    policies = _load_policies(Path(args.policy), chains)
    gen = cfg["generation"]
    out = Path(args.out)
    t0 = time.perf_counter()
    try:
        ds = generate_dataset(
            policies, out, int(gen["steps"]), cfg.seed, _scene(cfg), _cameras(cfg), chains,
            int(gen["targets_per_trajectory"]), True, cfg.trajectory(), int(gen["workers"]),
        )
    except DatasetWriteError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE
    cfg.snapshot(out)
    summary = {k: ds.manifest[k] for k in ("manifest_hash", "n_steps", "n_trajectories", "seed")}
    print(json.dumps(summary, sort_keys=True))
    print(f"wall time {time.perf_counter() - t0:.1f} s", file=sys.stderr)
    return EXIT_OK


def cmd_train_idm(args) -> int:
    from .atara.dataset import AtaraDataset
    from .idm.train import TrainingAborted, default_seeds, train_idm

    cfg = _load(args)
    train_cfg = cfg.train()
    if args.iterations is not None:
        train_cfg = train_cfg.scaled(args.iterations)
    ds = AtaraDataset(args.data)
    seeds = default_seeds(ds)
    out = Path(args.out)
    cfg.snapshot(out)
    extra = {
        "chains": ds.manifest["chains"],
        "split_seeds": seeds.to_dict(),
        "resolution": list(ds.resolution),
        "dataset_hash": ds.manifest.get("manifest_hash"),
        "augment": cfg.augment().to_dict(),
    }

    def log(entry):
        if args.verbose and ("val_accuracy" in entry or entry["iteration"] % 100 == 0):
            print(json.dumps(entry), file=sys.stderr)

    try:
        train_idm(ds, cfg.model(), train_cfg, cfg.seed, ds.chains, cfg.augment(), out, log, seeds=seeds,
                  extra=extra)
    except TrainingAborted as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_DIVERGED
    print(f"saved {out}")
    return EXIT_OK


def _predictor(spec: str, actions=None):
    from .eval import OraclePredictor
    from .idm.inference import load_predictor

    if spec == "oracle":
        return OraclePredictor(actions)
    path = Path(spec)
    if not (path / "manifest.json").exists():
        raise ConfigError(f"no model checkpoint at {path}")
    return load_predictor(path)


def cmd_eval(args) -> int:
    from .atara.dataset import AtaraDataset
    from .eval import dataset_accuracy

    cfg = _load(args)
    ds = AtaraDataset(args.data)
    model = _predictor(args.model, ds.actions())
    _check_resolution(model, ds.resolution)
    limit = args.limit if args.limit is not None else cfg["eval"]["limit"]
    report = dataset_accuracy(model, ds, cfg.thresholds(), limit)
    out = Path(args.out)
    cfg.snapshot(out)
    report.write(out / "report.json")
    print(f"sample accuracy {report.sample_accuracy:.2f}% over {report.n_samples} samples "
          f"(skipped {report.skipped}); L1 w/o gripper {report.l1_excluding_gripper:.4f}")
    return EXIT_OK


def _check_resolution(model, resolution):
    from .idm.inference import ResolutionError

    expected = getattr(model, "resolution", None)
    if expected is not None and tuple(expected) != tuple(resolution):
        raise ResolutionError(f"model was trained on {tuple(expected)} frames, input has {tuple(resolution)}")


def cmd_replay(args) -> int:
    from .eval import BiasedPredictor, load_episode, replay, replay_summary, scripted_episodes

    cfg = _load(args)
    chains = cfg.chains()
    out = Path(args.out)
    cfg.snapshot(out)
    rcfg = cfg["replay"]
    if args.episodes:
        roots = sorted(p for p in Path(args.episodes).iterdir() if (p / "manifest.json").exists())
        episodes = [load_episode(p)[0] for p in roots]
    else:
        episodes = scripted_episodes(chains, int(rcfg["episodes"]), int(rcfg["seed"]), int(rcfg["steps_per_substep"]),
                                     _cameras(cfg), _scene(cfg), out / "episodes")
    if not episodes:
        raise ConfigError("no replay episodes found")
    results = []
    for ep in episodes:
        model = _predictor(args.model, ep.actions)
        _check_resolution(model, ep.resolution)
        if args.bias:
            model = BiasedPredictor(model, np.full(14, args.bias))
        results.append(replay(model, ep, chains, cfg.thresholds()))
    summary = replay_summary(results)
    _write_json(out / "replay.json", {"summary": summary, "episodes": [r.trace() for r in results]})
    print(f"sub-step success {summary['substep_success_rate']:.1f}% "
          f"episode success {summary['episode_success_rate']:.1f}%")
    return EXIT_OK


def cmd_plot_coverage(args) -> int:
    from .atara.dataset import AtaraDataset
    from .eval import coverage_histogram, plot_coverage

    cfg = _load(args)
    res = coverage_histogram(AtaraDataset(args.data), args.bins)
    out = Path(args.out)
    cfg.snapshot(out)
    plot_coverage(res, out / "coverage.png")
    _write_json(out / "coverage.json", {"bins": args.bins, "counts": res.counts.tolist(),
                                        "min_bin": res.min_bin.tolist(), "full": res.full})
    print(f"minimum bin count per dim: {res.min_bin.tolist()}")
    return EXIT_OK


def cmd_report_ablation(args) -> int:
    from .eval import EvalReport, ablation_report

    cfg = _load(args)
    variants: dict = {}
    for item in args.report:
        try:
            key, path = item.split("=", 1)
            coupling, head = key.split("/", 1)
        except ValueError as exc:
            raise ConfigError(f"--report expects coupling/head=path, got {item!r}") from exc
        variants.setdefault((coupling, head), []).append(EvalReport.read(path))
    out = Path(args.out)
    cfg.snapshot(out)
    table = ablation_report(variants, out)
    for r, row in enumerate(table["rows"]):
        cells = " ".join("   -  " if v is None else f"{v:6.2f}" for v in table["accuracy"][r])
        print(f"{row:10s} {cells}")
    return EXIT_OK


# ---------------------------------------------------------------- parser


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="atara-lab", description=__doc__)
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp):
        sp.add_argument("--config", type=Path, help="YAML run configuration")
        sp.add_argument("--seed", type=int)
        sp.add_argument("--out", type=Path, required=True, help="output directory")
        sp.add_argument("--workers", type=_positive)
        sp.add_argument("-v", "--verbose", action="store_true")
        return sp

    sp = common(sub.add_parser("train-rl", help="train left and right reach policies"))
    sp.add_argument("--budget", type=_non_negative, help="environment steps per arm")
    sp.set_defaults(func=cmd_train_rl)

    sp = common(sub.add_parser("gen-data", help="generate an image-action dataset"))
    sp.add_argument("--policy", type=Path, required=True, help="directory written by train-rl")
    sp.add_argument("--steps", type=_non_negative)
    sp.set_defaults(func=cmd_gen_data)

    sp = common(sub.add_parser("train-idm", help="train an inverse dynamics model"))
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--iterations", type=_positive)
    sp.set_defaults(func=cmd_train_idm)

    sp = common(sub.add_parser("eval", help="threshold accuracy on a dataset"))
    sp.add_argument("--model", required=True, help="checkpoint directory or 'oracle'")
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--limit", type=_positive)
    sp.set_defaults(func=cmd_eval)

    sp = common(sub.add_parser("replay", help="replay scripted episodes through a model"))
    sp.add_argument("--model", required=True, help="checkpoint directory or 'oracle'")
    sp.add_argument("--episodes", type=Path, help="directory of recorded episodes (default: record new ones)")
    sp.add_argument("--bias", type=float, default=0.0, help="constant offset added to every prediction")
    sp.set_defaults(func=cmd_replay)

    sp = common(sub.add_parser("plot-coverage", help="per-dimension coverage histograms"))
    sp.add_argument("--data", type=Path, required=True)
    sp.add_argument("--bins", type=int, default=30)
    sp.set_defaults(func=cmd_plot_coverage)

    sp = common(sub.add_parser("report-ablation", help="coupling x head accuracy grid"))
    sp.add_argument("--report", action="append", required=True, metavar="COUPLING/HEAD=PATH")
    sp.set_defaults(func=cmd_report_ablation)
    return p


def main(argv=None) -> int:
    from .idm.inference import ResolutionError

    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except ResolutionError as exc:
        print(f"resolution error: {exc}", file=sys.stderr)
        return EXIT_RESOLUTION
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_FAILURE


if __name__ == "__main__":
    sys.exit(main())
