"""Command-line interface.

Every command prints a machine-readable ``key=value`` report on stdout and a
short human summary on stderr. Exit codes: 0 success, 1 data error or failed
check, 2 usage error.
"""

from __future__ import annotations

import argparse
import sys
from typing import List, Optional

import numpy as np

from . import losses, probes
from .io import ConfigError, RunConfig, SequenceFormatError, read_run_config, read_sequence, write_sequence
from .metrics import (
    MapConfig,
    MetricsReport,
    action_pairs,
    auc_roc,
    cmc_curve,
    cmotsa,
    identity_switches,
    map_metric,
)
from .simulator import CorruptionConfig, PenConfig, SimulationError, corrupt, generate
from .tracker import TrackedSequence, TrackerConfig, estimate_count, select_top_n, track

EXIT_OK, EXIT_DATA, EXIT_USAGE = 0, 1, 2


class _Fail(Exception):
    pass


def _emit(lines: List[str], summary: str) -> None:
    for line in lines:
        print(line)
    print(summary, file=sys.stderr)


def _run_config(args) -> RunConfig:
    return read_run_config(args.config) if args.config else RunConfig()


def _ints(text: str) -> List[int]:
    try:
        return [int(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers, got {text!r}") from None


# -- commands ------------------------------------------------------------------------------


def cmd_simulate(args) -> int:
    rc = _run_config(args).override(
        "simulator", seed=args.seed, n_pigs=args.pigs, n_frames=args.frames, frame_w=args.width,
        frame_h=args.height, fps=args.fps, embed_dim=args.dim,
    )
    seq = generate(rc.simulator)
    write_sequence(seq, args.output)
    cfg = rc.simulator
    _emit(
        [f"n={cfg.n_pigs}", f"frames={cfg.n_frames}", f"seed={cfg.seed}", f"output={args.output}"],
        f"simulated {cfg.n_pigs} pigs over {cfg.n_frames} frames -> {args.output}",
    )
    return EXIT_OK


def cmd_corrupt(args) -> int:
    rc = _run_config(args).override(
        "corruption", target_iou=args.target_iou, drop_rate=args.drop_rate, dup_rate=args.dup_rate,
        embed_noise_sigma=args.embed_noise, score_noise=args.score_noise,
        action_noise=args.action_noise, shuffle=True if args.shuffle else None,
    )
    gt = read_sequence(args.input)
    pred = corrupt(gt, rc.corruption, seed=args.seed)
    write_sequence(pred, args.output)
    counts = [len(fr.instances) for fr in pred.frames]
    _emit(
        [f"frames={len(counts)}", f"instances={sum(counts)}", f"output={args.output}"],
        f"corrupted {args.input} (seed {args.seed}) -> {args.output}",
    )
    return EXIT_OK


def _tracker_cfg(args, rc: RunConfig, mode: Optional[str] = None) -> TrackerConfig:
    return rc.override(
        "tracker", mode=mode or getattr(args, "mode", None), radius_r=args.radius,
        gate_metric=args.gate_metric, burn_in=getattr(args, "burn_in", None),
    ).tracker


def cmd_track(args) -> int:
    rc = _run_config(args)
    cfg = _tracker_cfg(args, rc)
    pred, gt = read_sequence(args.pred), read_sequence(args.gt)
    est = estimate_count(pred.frames, min(cfg.burn_in, len(pred.frames)))
    tracked = track(pred, gt.frames[0], cfg)
    write_sequence(tracked.to_video_sequence(gt.meta), args.output)
    flags = [d.flag for ft in tracked.frames for d in ft.diagnostics]
    lines = [
        f"mode={cfg.mode}",
        f"tracks={len(tracked.track_ids)}",
        f"estimated_n={est}",
        f"forced={flags.count('forced')}",
        f"gated={flags.count('gated')}",
        f"shortfall={flags.count('shortfall')}",
        f"output={args.output}",
    ]
    _emit(lines, f"tracked {len(tracked.track_ids)} identities over {len(tracked.frames)} frames ({cfg.mode})")
    return EXIT_OK


def cmd_eval_track(args) -> int:
    rc = _run_config(args)
    pred, gt = read_sequence(args.pred), read_sequence(args.gt)
    modes = ["masks", "embeddings"] if args.mode == "both" else [args.mode]
    report = MetricsReport()
    for mode in modes:
        if args.pretracked:
            tracked = TrackedSequence.from_video_sequence(pred, [i.instance_id for i in gt.frames[0].instances])
        else:
            tracked = track(pred, gt.frames[0], _tracker_cfg(args, rc, mode))
        res = cmotsa(tracked, gt)
        report.cmotsa[mode] = res.cmotsa
        report.scmotsa[mode] = res.scmotsa
        report.tallies[mode] = res.tally
        report.id_switches[mode] = identity_switches(tracked, gt)
    summary = ", ".join(f"{m}: cMOTSA {report.cmotsa[m]:.3f} scMOTSA {report.scmotsa[m]:.3f}" for m in modes)
    _emit(report.to_lines(), summary)
    return EXIT_OK


def cmd_eval_seg(args) -> int:
    rc = _run_config(args)
    cfg = rc.map
    if args.all_points:
        cfg = MapConfig(cfg.iou_thresholds, "all")
    pred, gt = read_sequence(args.pred), read_sequence(args.gt)
    frames = pred.frames
    if not args.no_constrain:
        frames = [select_top_n(fr, gt.meta.n)[0] for fr in frames]
    report = MetricsReport()
    report.map_50_95, report.map_50 = map_metric(frames, gt.frames, cfg)
    _emit(report.to_lines(), f"mAP 0.5:0.95 {report.map_50_95:.3f}, mAP 0.5 {report.map_50:.3f}")
    return EXIT_OK


def cmd_eval_reid(args) -> int:
    videos = [read_sequence(p) for p in args.sequences]
    report = MetricsReport()
    for interval in args.intervals:
        report.cmc.append(cmc_curve(videos, interval, args.max_rank))
    summary = ", ".join(f"interval {c.interframe_interval}: R1 {c.rank(1):.3f}" for c in report.cmc)
    _emit(report.to_lines(), summary)
    return EXIT_OK


def cmd_eval_action(args) -> int:
    pred, gt = read_sequence(args.pred), read_sequence(args.gt)
    scores, labels = action_pairs(pred.frames, gt.frames)
    report = MetricsReport(action_auc=auc_roc(scores, labels))
    _emit(report.to_lines(), f"action AUC {report.action_auc:.3f} over {len(scores)} instances")
    return EXIT_OK


def _stc_from_sequence(path: str, rc: RunConfig):
    seq = read_sequence(path)
    ids = sorted(i.instance_id for i in seq.frames[0].instances)
    frames = []
    for fr in seq.frames[: rc.contrastive.tau]:
        row = []
        for i in ids:
            inst = fr.by_id(i)
            if inst is None:
                raise ValueError(f"pig {i} missing from frame {fr.frame_index}")
            row.append(inst.embedding)
        frames.append(row)
    return losses.stc_loss(frames, rc.contrastive, mode="window")


def cmd_loss(args) -> int:
    rc = _run_config(args)
    if args.sequence:
        if args.loss != "stc":
            raise _Fail("--sequence is only supported with --loss stc")
        lv = _stc_from_sequence(args.sequence, rc)
    else:
        fn, inputs = _probe(args.loss, rc, np.random.default_rng(args.seed))
        lv = fn(**inputs)
    lines = [f"loss={args.loss}", f"value={lv.value!r}"] + [f"terms.{k}={v!r}" for k, v in lv.terms.items()]
    _emit(lines, f"{args.loss} loss = {lv.value:.6g}")
    return EXIT_OK


def _probe(name: str, rc: RunConfig, rng):
    if name == "stc":
        return probes.stc(rng, rc.contrastive)
    if name == "detection":
        return probes.detection(rng, rc.detection)
    if name in ("dice", "focal"):
        return probes.PROBES[name](rng, rc.segmentation)
    return probes.PROBES[name](rng)


def cmd_gradcheck(args) -> int:
    rc = _run_config(args)
    names = list(probes.PROBES) if args.loss == "all" else [args.loss]
    rng = np.random.default_rng(args.seed)
    lines, worst_all = [], 0.0
    for name in names:
        worst = 0.0
        for _ in range(args.points):
            fn, inputs = _probe(name, rc, rng)
            worst = max(worst, losses.grad_check(fn, inputs, rel_tol=args.rel_tol).max_rel_error)
        lines.append(f"max_rel_error.{name}={worst!r}")
        worst_all = max(worst_all, worst)
    passed = worst_all < args.rel_tol
    lines += [f"max_rel_error={worst_all!r}", f"rel_tol={args.rel_tol!r}", f"passed={str(passed).lower()}"]
    _emit(lines, f"gradcheck {'passed' if passed else 'FAILED'}: max relative error {worst_all:.3e}")
    return EXIT_OK if passed else EXIT_DATA


# -- parser ----------------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="starkit", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)

    def command(name, fn, help_text):
        sp = sub.add_parser(name, help=help_text)
        sp.add_argument("--config", help="run configuration file (INI); flags override it")
        sp.set_defaults(func=fn)
        return sp

    sp = command("simulate", cmd_simulate, "generate a ground-truth synthetic pen sequence")
    sp.add_argument("--seed", type=int)
    sp.add_argument("--pigs", type=int)
    sp.add_argument("--frames", type=int)
    sp.add_argument("--width", type=int)
    sp.add_argument("--height", type=int)
    sp.add_argument("--fps", type=float)
    sp.add_argument("--dim", type=int, help="embedding dimension")
    sp.add_argument("-o", "--output", required=True)

    sp = command("corrupt", cmd_corrupt, "derive prediction-like sequence from ground truth")
    sp.add_argument("input")
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--target-iou", type=float)
    sp.add_argument("--drop-rate", type=float)
    sp.add_argument("--dup-rate", type=float)
    sp.add_argument("--embed-noise", type=float)
    sp.add_argument("--score-noise", type=float)
    sp.add_argument("--action-noise", type=float)
    sp.add_argument("--shuffle", action="store_true", help="shuffle instance order per frame")
    sp.add_argument("-o", "--output", required=True)

    def tracker_flags(sp, modes):
        sp.add_argument("--mode", choices=modes, default=None if "both" not in modes else "masks")
        sp.add_argument("--radius", type=float, help="embedding gate radius R")
        sp.add_argument("--gate-metric", choices=["cosine", "euclidean"])

    sp = command("track", cmd_track, "track predictions with the fixed-population tracker")
    sp.add_argument("pred")
    sp.add_argument("gt", help="ground truth; its first frame initialises the identities")
    tracker_flags(sp, ["masks", "embeddings"])
    sp.add_argument("--burn-in", type=int)
    sp.add_argument("-o", "--output", required=True)

    sp = command("eval-track", cmd_eval_track, "cMOTSA / scMOTSA")
    sp.add_argument("pred")
    sp.add_argument("gt")
    tracker_flags(sp, ["masks", "embeddings", "both"])
    sp.add_argument("--pretracked", action="store_true", help="pred instance ids are already track ids")

    sp = command("eval-seg", cmd_eval_seg, "mask mAP at 0.5:0.95 and 0.5")
    sp.add_argument("pred")
    sp.add_argument("gt")
    sp.add_argument("--all-points", action="store_true", help="exact all-points AP instead of 101-point")
    sp.add_argument("--no-constrain", action="store_true", help="keep all predictions, not only the top N")

    sp = command("eval-reid", cmd_eval_reid, "CMC curves per inter-frame interval")
    sp.add_argument("sequences", nargs="+")
    sp.add_argument("--intervals", type=_ints, default=[0, 1, 2, 4])
    sp.add_argument("--max-rank", type=int)

    sp = command("eval-action", cmd_eval_action, "action AUC-ROC")
    sp.add_argument("pred")
    sp.add_argument("gt")

    sp = command("loss", cmd_loss, "evaluate a loss kernel")
    sp.add_argument("--loss", choices=sorted(probes.PROBES), required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--sequence", help="take stc embeddings from a sequence file")

    sp = command("gradcheck", cmd_gradcheck, "check analytic gradients by central differences")
    sp.add_argument("--loss", choices=sorted(probes.PROBES) + ["all"], required=True)
    sp.add_argument("--seed", type=int, default=0)
    sp.add_argument("--points", type=int, default=1)
    sp.add_argument("--rel-tol", type=float, default=1e-4)
    return p


def main(argv: Optional[List[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)
    try:
        return args.func(args)
    except SequenceFormatError as exc:
        print(f"error: sequence {exc}", file=sys.stderr)
    except ConfigError as exc:
        print(f"error: config: {exc}", file=sys.stderr)
    except SimulationError as exc:
        print(f"error: simulation: {exc}", file=sys.stderr)
    except _Fail as exc:
        print(f"error: usage: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(f"error: data: {exc}", file=sys.stderr)
    except OSError as exc:
        print(f"error: io: {exc}", file=sys.stderr)
    return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
