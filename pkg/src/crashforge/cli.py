"""Command-line entry point.

One binary, subcommand style. Exit codes: 0 success, 1 usage error (usage
text on stderr), 2 runtime error (single-line diagnostic on stderr).
"""

from __future__ import annotations

import argparse
import os
import sys
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import learner, nn, pipeline, render, sampling, scenarios
from .rng import derive_stream


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    """argparse exits 2 on usage errors; the contract here is exit 1."""

    def error(self, message):
        raise UsageError(f"{self.prog}: error: {message}\n{self.format_usage()}")


def _build_parser() -> _Parser:
    parser = _Parser(prog="crashforge", description="Deterministic pre-crash scenario dataset and steering-model pipeline.")
    sub = parser.add_subparsers(dest="command", required=True)

    p_scen = sub.add_parser("scenarios", help="scenario catalog commands")
    scen_sub = p_scen.add_subparsers(dest="scenarios_command", required=True)
    scen_sub.add_parser("list", help="print the scenario catalog as a table")

    p_gen = sub.add_parser("generate", help="generate an episode dataset")
    p_gen.add_argument("--scenarios", default="all", help="'all' or comma-separated scenario ids (default: all)")
    p_gen.add_argument("--episodes", type=int, required=True, help="number of episodes (>= 1)")
    p_gen.add_argument("--seed", type=int, default=0, help="master seed (default: 0)")
    p_gen.add_argument("--out", required=True, help="output dataset directory")
    p_gen.add_argument("--include-rear-end", action="store_true", help="include the rear-end templates in the default rotation")
    p_gen.add_argument("--frame-rate", type=int, default=5, help="frames per second, must divide 50 (default: 5)")
    p_gen.add_argument("--sampling-config", default=None, help="key=value file overriding built-in parameter distributions")
    p_gen.add_argument("--workers", type=int, default=None, help="parallel workers (default: CRASHFORGE_WORKERS or 1)")
    p_gen.add_argument("--render-profile", choices=sorted(render.PROFILES), default="default", help="render palette/noise profile (default: default)")

    p_stats = sub.add_parser("stats", help="print dataset outcome statistics")
    p_stats.add_argument("dir", help="dataset directory")

    p_split = sub.add_parser("split", help="write train/val/test split manifests")
    p_split.add_argument("dir", help="dataset directory")
    p_split.add_argument("--ratios", default="0.8,0.1,0.1", help="train,val,test ratios summing to 1 (default: 0.8,0.1,0.1)")
    p_split.add_argument("--seed", type=int, default=0, help="shuffle seed (default: 0)")
    p_split.add_argument("--keep-post-contact", action="store_true", help="keep frames at/after first contact (default: dropped)")

    p_prev = sub.add_parser("render-preview", help="render one mid-episode frame of a scenario")
    p_prev.add_argument("--scenario", required=True, help="scenario id")
    p_prev.add_argument("--seed", type=int, default=0, help="episode seed (default: 0)")
    p_prev.add_argument("--out", required=True, help="output PGM path")
    p_prev.add_argument("--render-profile", choices=sorted(render.PROFILES), default="default", help="render profile (default: default)")

    p_train = sub.add_parser("train", help="train the steering network")
    p_train.add_argument("--data", required=True, help="training split directory")
    p_train.add_argument("--val", required=True, help="validation split directory")
    p_train.add_argument("--init", default="xavier", help="'xavier' or 'ckpt:PATH' (default: xavier)")
    p_train.add_argument("--lr", type=float, default=1e-3, help="SGD learning rate (default: 0.001)")
    p_train.add_argument("--batch", type=int, default=32, help="mini-batch size (default: 32)")
    p_train.add_argument("--epochs", type=int, default=30, help="training epochs (default: 30)")
    p_train.add_argument("--seed", type=int, default=0, help="init/shuffle seed (default: 0)")
    p_train.add_argument("--out", required=True, help="output checkpoint path")

    p_eval = sub.add_parser("eval", help="evaluate a checkpoint on a split")
    p_eval.add_argument("--ckpt", required=True, help="checkpoint path")
    p_eval.add_argument("--data", required=True, help="split directory")
    p_eval.add_argument("--per-frame", default=None, help="optional per-frame deviation CSV path")

    p_gc = sub.add_parser("gradcheck", help="compare analytic and finite-difference gradients")
    p_gc.add_argument("--seed", type=int, default=0, help="probe seed (default: 0)")
    p_gc.add_argument("--probes", type=int, default=200, help="number of probed parameters (default: 200)")

    p_tx = sub.add_parser("transfer-exp", help="two-stage transfer-learning comparison")
    p_tx.add_argument("--stage1", required=True, help="stage-1 dataset dir (train/ and val/ splits)")
    p_tx.add_argument("--stage2", required=True, help="stage-2 dataset dir (train/, val/, test/ splits)")
    p_tx.add_argument("--seeds", type=int, default=5, help="number of comparison seeds (default: 5)")
    p_tx.add_argument("--threshold", type=float, default=None, help="validation-loss convergence threshold (default: per-seed baseline final loss)")
    p_tx.add_argument("--lr", type=float, default=1e-3, help="SGD learning rate (default: 0.001)")
    p_tx.add_argument("--batch", type=int, default=32, help="mini-batch size (default: 32)")
    p_tx.add_argument("--epochs", type=int, default=30, help="epochs per arm (default: 30)")
    p_tx.add_argument("--out", required=True, help="output JSON report path")

    p_cfg = sub.add_parser("config", help="configuration commands")
    cfg_sub = p_cfg.add_subparsers(dest="config_command", required=True)
    cfg_sub.add_parser("show", help="print all built-in defaults")

    return parser


def _cmd_scenarios_list() -> int:
    rows = [("id", "name", "environment", "in_default_dataset")]
    for t in scenarios.list_scenarios():
        rows.append((t.id, t.name, t.environment.value, "yes" if t.in_default_dataset else "no"))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        print("  ".join(cell.ljust(w) for cell, w in zip(r, widths)).rstrip())
    return 0


def _resolve_templates(spec_text: str, include_rear_end: bool):
    if spec_text == "all":
        return scenarios.default_templates(include_rear_end)
    templates = []
    for sid in spec_text.split(","):
        sid = sid.strip()
        try:
            templates.append(scenarios.get_scenario(sid))
        except KeyError:
            raise UsageError(f"crashforge generate: error: unknown scenario id {sid!r}") from None
    return templates


def _cmd_generate(args) -> int:
    if args.episodes < 1:
        raise UsageError("crashforge generate: error: --episodes must be >= 1")
    workers = args.workers
    if workers is None:
        workers = int(os.environ.get("CRASHFORGE_WORKERS", "1"))
    config = pipeline.RunConfig(
        frame_rate_hz=args.frame_rate,
        include_rear_end=args.include_rear_end,
        workers=workers,
        render_profile=args.render_profile,
    )
    sampling_config = (
        sampling.SamplingConfig.from_file(args.sampling_config)
        if args.sampling_config
        else sampling.SamplingConfig.defaults()
    )
    templates = _resolve_templates(args.scenarios, args.include_rear_end)
    summary = pipeline.generate_dataset(
        args.episodes,
        args.seed,
        args.out,
        sampling_config=sampling_config,
        run_config=config,
        templates=templates,
        profile=render.PROFILES[args.render_profile](),
    )
    for line in summary.lines():
        print(line)
    return 0


def _cmd_stats(args) -> int:
    for line in pipeline.collision_stats(args.dir).lines():
        print(line)
    return 0


def _cmd_split(args) -> int:
    parts = args.ratios.split(",")
    if len(parts) != 3:
        raise UsageError("crashforge split: error: --ratios needs three comma-separated values")
    try:
        ratios = tuple(float(p) for p in parts)
    except ValueError:
        raise UsageError(f"crashforge split: error: bad --ratios {args.ratios!r}") from None
    out = pipeline.split_dataset(
        args.dir, ratios, args.seed, exclude_post_contact=not args.keep_post_contact
    )
    for name in ("train", "val", "test"):
        n = len(pipeline._read_csv(out[name] / "frames.csv", pipeline.FRAMES_HEADER))
        print(f"{name}: {n} frames -> {out[name]}")
    return 0


def _cmd_render_preview(args) -> int:
    try:
        template = scenarios.get_scenario(args.scenario)
    except KeyError:
        raise RuntimeError(f"unknown scenario id {args.scenario!r}") from None
    stream = derive_stream(args.seed, 0)
    params = sampling.sample_parameters(template, sampling.SamplingConfig.defaults(), stream)
    setup = scenarios.instantiate(template, params, stream)
    record = pipeline.run_episode(
        setup, params, pipeline.RunConfig(), stream, profile=render.PROFILES[args.render_profile]()
    )
    mid = min(record.frames, key=lambda f: abs(f.t - 5.0))
    out = Path(args.out)
    if out.parent != Path(""):
        out.parent.mkdir(parents=True, exist_ok=True)
    mid.image.write(out)
    print(f"wrote {out} (t = {pipeline.fmt(mid.t)} s, scenario {template.id})")
    return 0


def _cmd_train(args) -> int:
    config = learner.TrainConfig(
        learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs,
        seed=args.seed, init=args.init,
    )
    out_path, metrics = learner.train(args.data, args.val, config, args.out)
    for m in metrics:
        print(
            f"epoch {m.epoch:3d}  train_loss {pipeline.fmt(m.train_loss)}"
            f"  val_loss {pipeline.fmt(m.val_loss)}  val_acc {pipeline.fmt(m.val_acc)}"
        )
    print(f"saved {out_path}")
    return 0


def _cmd_eval(args) -> int:
    deviation = learner.evaluate_checkpoint(args.ckpt, args.data, args.per_frame)
    print(f"mean_abs_deviation_deg {pipeline.fmt(deviation)}")
    return 0


def _cmd_gradcheck(args) -> int:
    max_rel, results = learner.gradient_check(seed=args.seed, n_probes=args.probes)
    print(f"probes {len(results)}  max_rel_error {max_rel:.3e}")
    return 0


def _cmd_transfer_exp(args) -> int:
    config = learner.TrainConfig(learning_rate=args.lr, batch_size=args.batch, epochs=args.epochs)
    report = learner.transfer_experiment(
        args.stage1, args.stage2, seeds=list(range(args.seeds)), config=config,
        loss_threshold=args.threshold, out_report=args.out,
    )
    s = report["summary"]
    print(f"transfer converges faster: {s['seeds_transfer_converges_faster']}/{s['n_seeds']} seeds")
    print(f"transfer deviation <= baseline: {s['seeds_transfer_deviation_leq']}/{s['n_seeds']} seeds")
    print(
        "mean test deviation (deg): "
        f"xavier {pipeline.fmt(s['mean_test_deviation_deg']['xavier'])}, "
        f"transfer {pipeline.fmt(s['mean_test_deviation_deg']['transfer'])}"
    )
    print(f"report: {args.out}")
    return 0


def _cmd_config_show() -> int:
    print("[run]")
    for f in fields(pipeline.RunConfig):
        if f.init:
            print(f"{f.name} = {f.default}")
    print(f"dt_s = {pipeline.DT_S}")
    print()
    print("[sampling]")
    cfg = sampling.SamplingConfig.defaults()
    for f in fields(cfg):
        spec = getattr(cfg, f.name)
        print(
            f"{f.name}: kind={spec.kind.value} mean={spec.mean} std={spec.std}"
            f" bounds=[{spec.lower}, {spec.upper}]"
        )
    print()
    print("[camera]")
    cam = render.CameraModel()
    for f in fields(cam):
        print(f"{f.name} = {getattr(cam, f.name)}")
    print()
    for name in sorted(render.PROFILES):
        print(f"[render.{name}]")
        profile = render.PROFILES[name]()
        for f in fields(profile):
            print(f"{f.name} = {getattr(profile, f.name)}")
        print()
    print("[train]")
    for f in fields(learner.TrainConfig):
        print(f"{f.name} = {f.default}")
    return 0


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = _build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1

    try:
        if args.command == "scenarios":
            return _cmd_scenarios_list()
        if args.command == "generate":
            return _cmd_generate(args)
        if args.command == "stats":
            return _cmd_stats(args)
        if args.command == "split":
            return _cmd_split(args)
        if args.command == "render-preview":
            return _cmd_render_preview(args)
        if args.command == "train":
            return _cmd_train(args)
        if args.command == "eval":
            return _cmd_eval(args)
        if args.command == "gradcheck":
            return _cmd_gradcheck(args)
        if args.command == "transfer-exp":
            return _cmd_transfer_exp(args)
        if args.command == "config":
            return _cmd_config_show()
        raise UsageError(f"crashforge: error: unknown command {args.command!r}")
    except UsageError as exc:
        print(exc, file=sys.stderr)
        return 1
    except (
        pipeline.ManifestError,
        pipeline.IoError,
        sampling.SamplingError,
        learner.EmptyTestSetError,
        nn.ShapeMismatchError,
        nn.NonFiniteLossError,
        nn.SpecHashMismatchError,
        nn.CheckpointFormatError,
        scenarios.UnknownBehaviorRuleError,
        FileNotFoundError,
        NotADirectoryError,
        ValueError,
        RuntimeError,
    ) as exc:
        print(f"crashforge: error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
