"""Command-line entry point: make-data, train, complete, eval.

Every run is a pure function of its configuration: data generation,
training, and completion write byte-identical artifacts when re-run with
the same config. Exit codes: 0 success, 1 usage error, 2 runtime error.
"""
from __future__ import annotations

import argparse
import dataclasses
import sys
from pathlib import Path

import numpy as np

from . import cloud_io, coupling, field, metrics, sampler, scenes
from .config import RunConfig, _parse_value, build_config, read_config_file

# rng stream label for training, distinct from data-generation seeds
_TRAIN_STREAM = 0x7E41


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(message)


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", metavar="FILE", default=None,
                        help="flat key = value config file")
    for f in dataclasses.fields(RunConfig):
        parser.add_argument(f"--{f.name.replace('_', '-')}",
                            dest=f"cfg_{f.name}", metavar="V", default=None,
                            help=f"override {f.name} (default {f.default!r})")


def _config_from_args(args: argparse.Namespace) -> RunConfig:
    file_overrides = read_config_file(args.config) if args.config else {}
    flag_overrides = {}
    for key, raw in vars(args).items():
        if key.startswith("cfg_") and raw is not None:
            name = key[len("cfg_"):]
            flag_overrides[name] = _parse_value(name, raw)
    try:
        return build_config(file_overrides, flag_overrides)
    except ValueError as exc:
        raise UsageError(str(exc)) from exc


def cmd_make_data(cfg: RunConfig, out_dir: str) -> int:
    out = Path(out_dir)
    (out / "scenes").mkdir(parents=True, exist_ok=True)
    (out / "scans").mkdir(parents=True, exist_ok=True)
    entries = []
    for i in range(cfg.cases):
        case_seed = cfg.scene_seed + i
        case_id = f"case-{i:03d}"
        spec = scenes.random_scene_spec(case_seed, cfg.ground_half_extent,
                                        cfg.density)
        case = scenes.build_case(case_id, spec, cfg.scan_spec(case_seed))
        scene_rel = f"scenes/{case_id}.ply"
        scan_rel = f"scans/{case_id}.ply"
        cloud_io.write_cloud(case.scene, out / scene_rel, "ply-binary")
        cloud_io.write_cloud(case.scan, out / scan_rel, "ply-binary")
        entries.append(cloud_io.ManifestEntry(case_id, scene_rel, scan_rel,
                                              case_seed))
    cloud_io.write_manifest(entries, out / "manifest.tsv")
    print(f"wrote {len(entries)} cases under {out}")
    return 0


def _load_dataset(data_dir: Path):
    entries = cloud_io.read_manifest(data_dir / "manifest.tsv")
    cases = []
    for e in entries:
        scene = cloud_io.read_cloud(data_dir / e.scene_path)
        scan = cloud_io.read_cloud(data_dir / e.scan_path)
        cases.append((scene, scan))
    return entries, cases


def cmd_train(cfg: RunConfig, data_dir: str, out_path: str) -> int:
    entries, cases = _load_dataset(Path(data_dir))
    if not cases:
        raise RuntimeError(f"no cases listed in {data_dir}/manifest.tsv")
    Path(out_path).parent.mkdir(parents=True, exist_ok=True)

    state = field.init_model(cfg.field_config())
    opt = field.init_optimizer(state, learning_rate=cfg.learning_rate)
    weights = cfg.loss_weights()
    rng = np.random.default_rng([cfg.seed, _TRAIN_STREAM])

    step = 0
    capped = False
    try:
        for epoch in range(cfg.epochs):
            if capped:
                break
            order = rng.permutation(len(cases))
            for start in range(0, len(order), cfg.batch_size):
                batch = order[start:start + cfg.batch_size]
                samples = []
                for case_index in batch:
                    scene, scan = cases[case_index]
                    noise = cfg.noise_config(seed=int(rng.integers(2 ** 63)))
                    x0 = coupling.noisy_initial_cloud(scan, cfg.copies, noise)
                    t = coupling.sample_time(rng)
                    draw = coupling.draw_condition(scan, cfg.p_null, rng)
                    samples.append(coupling.nearest_neighbor_flow(
                        x0, scene, t, condition=draw.outcome))
                state, opt, report = field.train_batch(state, opt, samples, weights)
                state = field.ema_update(state, cfg.ema_decay)
                step += 1
                print(f"step={step} epoch={epoch} flow={report.flow:.6f} "
                      f"chamfer={report.chamfer:.6f} total={report.total:.6f}")
                if cfg.max_steps and step >= cfg.max_steps:
                    capped = True
                    break
    except FloatingPointError as exc:
        # keep the last finite state so the run is not a total loss
        field.save_checkpoint(out_path, state, opt)
        raise RuntimeError(
            f"training aborted at step {step + 1} ({exc}); "
            f"last good checkpoint written to {out_path}"
        ) from exc
    field.save_checkpoint(out_path, state, opt)
    print(f"trained {step} steps; checkpoint written to {out_path}")
    return 0


def cmd_complete(cfg: RunConfig, checkpoint_path: str, scan_path: str,
                 out_path: str) -> int:
    state, _ = field.load_checkpoint(checkpoint_path)
    scan = cloud_io.read_cloud(scan_path)
    noise = cfg.noise_config(seed=cfg.seed)
    sampler_cfg = cfg.sampler_config()
    out = Path(out_path)
    out.parent.mkdir(parents=True, exist_ok=True)
    if sampler_cfg.record_trajectory:
        x0 = coupling.noisy_initial_cloud(scan, cfg.copies, noise)
        traj = sampler.euler_integrate(state, x0, scan, sampler_cfg)
        for t, cloud in zip(traj.times, traj.states):
            step_path = out.with_name(f"{out.stem}-t{t:.2f}{out.suffix}")
            cloud_io.write_cloud(cloud, step_path, "ply-binary")
        final = traj.final
    else:
        final = sampler.complete_scene(state, scan, cfg.copies, noise, sampler_cfg)
    cloud_io.write_cloud(final, out, "ply-binary")
    print(f"wrote {len(final)} points to {out}")
    return 0


def cmd_eval(cfg: RunConfig, pred_paths, gt_paths, report_path=None) -> int:
    if len(pred_paths) != len(gt_paths):
        raise UsageError(
            f"mismatched pair counts: {len(pred_paths)} predictions "
            f"vs {len(gt_paths)} ground truths"
        )
    metric_cfg = cfg.metric_config()
    rows = []
    for pred_path, gt_path in zip(pred_paths, gt_paths):
        pred = cloud_io.read_cloud(pred_path)
        gt = cloud_io.read_cloud(gt_path)
        rows.append((Path(pred_path).stem, metrics.evaluate(pred, gt, metric_cfg)))
    sys.stdout.write(metrics.format_table(rows))
    if report_path:
        mean = metrics.EvalReport(
            cd_m=float(np.mean([r.cd_m for _, r in rows])),
            jsd=float(np.mean([r.jsd for _, r in rows])),
            voxel_iou={
                res: float(np.mean([r.voxel_iou[res] for _, r in rows]))
                for res in rows[0][1].voxel_iou
            },
            wall_time_s=float(np.sum([r.wall_time_s for _, r in rows])),
        )
        Path(report_path).parent.mkdir(parents=True, exist_ok=True)
        Path(report_path).write_text(metrics.format_report(mean))
    return 0


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(prog="flowcomplete",
                     description="Flow-based completion of partial 3-D scans")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("make-data", help="generate synthetic scene/scan pairs")
    _add_config_flags(p)
    p.add_argument("--out", metavar="DIR", default=None,
                   help="dataset directory (default: the data_dir config key)")

    p = sub.add_parser("train", help="train a field checkpoint on a dataset")
    _add_config_flags(p)
    p.add_argument("--data", metavar="DIR", default=None,
                   help="dataset directory (default: the data_dir config key)")
    p.add_argument("--out", metavar="FILE", default=None,
                   help="checkpoint path (default: <output_dir>/model.ckpt)")

    p = sub.add_parser("complete", help="complete one scan with a checkpoint")
    _add_config_flags(p)
    p.add_argument("--checkpoint", metavar="FILE", required=True)
    p.add_argument("--scan", metavar="FILE", required=True)
    p.add_argument("--out", metavar="FILE", default=None,
                   help="output cloud (default: <output_dir>/completed.ply)")

    p = sub.add_parser("eval", help="evaluate completions against ground truth")
    _add_config_flags(p)
    p.add_argument("--pred", metavar="FILE", nargs="+", required=True)
    p.add_argument("--gt", metavar="FILE", nargs="+", required=True)
    p.add_argument("--report", metavar="FILE", default=None,
                   help="also write the aggregate report here")

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    cfg = _config_from_args(args)
    if args.command == "make-data":
        return cmd_make_data(cfg, args.out or cfg.data_dir)
    if args.command == "train":
        out = args.out or str(Path(cfg.output_dir) / "model.ckpt")
        return cmd_train(cfg, args.data or cfg.data_dir, out)
    if args.command == "complete":
        out = args.out or str(Path(cfg.output_dir) / "completed.ply")
        return cmd_complete(cfg, args.checkpoint, args.scan, out)
    if args.command == "eval":
        return cmd_eval(cfg, args.pred, args.gt, args.report)
    raise UsageError(f"unknown command {args.command!r}")


def main_entry() -> None:
    try:
        code = main(sys.argv[1:])
    except UsageError as exc:
        print(f"usage error: {exc}", file=sys.stderr)
        code = 1
    except BrokenPipeError:
        code = 0
    except Exception as exc:  # runtime failures: one line, exit 2
        print(f"error: {exc}", file=sys.stderr)
        code = 2
    raise SystemExit(code)


if __name__ == "__main__":
    main_entry()
