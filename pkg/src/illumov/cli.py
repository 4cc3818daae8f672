"""Command-line pipeline: synthesize, compute invariants, train, decompose, evaluate.

Subcommands::

    synth       render the standard synthetic benchmark sequence
    invariant   write illumination-invariant images for a sequence
    train       batch or online training; writes masks, decomposition
                images, a checkpoint, and a JSON manifest
    decompose   apply an existing checkpoint to new frames (online fitting)
    eval        score predicted masks against ground truth (CSV + JSON)

Values resolve as: command-line flag > config file > built-in default.  The
config file is plain text, one ``key = value`` per line, ``#`` comments.
Exit codes: 0 success, 1 runtime failure, 2 usage error.
"""

from __future__ import annotations

import argparse
import csv
import json
import sys
from contextlib import contextmanager
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import __version__
from .core import (
    RunningStd,
    TrainConfig,
    TrainingDivergedError,
    load_checkpoint,
    save_checkpoint,
    train_batch,
    train_online,
    weights_checksum,
)
from .invariant import InvariantModel, calibrate_direction, psi_sequence
from .io import (
    DatasetError,
    Sequence,
    load_masks,
    load_sequence,
    save_image,
    save_mask,
)
from .metrics import NoEvaluableFramesError, f_measure_sequence, score_frames
from .synth import generate, standard_fixture_config


class UsageError(Exception):
    """Bad invocation (missing paths, malformed config); exits with code 2."""


# ---------------------------------------------------------------------------
# option resolution: flag > config file > default


def _parse_bool(text: str) -> bool:
    lowered = text.strip().lower()
    if lowered in ("1", "true", "yes", "on"):
        return True
    if lowered in ("0", "false", "no", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _int_or_none(text: str):
    return None if text.strip().lower() == "none" else int(text)


def _float_or_none(text: str):
    return None if text.strip().lower() == "none" else float(text)


def _choice(*allowed):
    def convert(text: str) -> str:
        if text not in allowed:
            raise ValueError(f"must be one of {', '.join(allowed)}: got {text!r}")
        return text

    return convert


# key -> (converter, default, help)
COMMON_IO_OPTIONS = {
    "pattern": (str, "*.png", "filename glob for frames"),
    "max_side": (_int_or_none, None, "downsample so max(width, height) <= this"),
}
INVARIANT_OPTIONS = {
    "angle": (_float_or_none, None,
              "projection angle in radians; skips calibration when given"),
    "window": (int, 7, "Wiener window size (odd, >= 3)"),
    "noise": (_float_or_none, None,
              "Wiener noise variance; default estimates it per image"),
    "epsilon_log": (float, 1e-4, "floor for channel values before logarithms"),
}
TRAIN_OPTIONS = {
    **COMMON_IO_OPTIONS,
    **INVARIANT_OPTIONS,
    "mode": (_choice("batch", "online"), "batch", "training mode"),
    "seed": (int, 0, "base random seed"),
    "threads": (int, 1, "cap on BLAS threads (1 = fully deterministic)"),
    "epochs": (int, 300, "batch training epochs"),
    "latent_size": (int, 5, "latent code length for both decoders"),
    "weight_decay": (float, 0.005, "L2 penalty on decoder weights"),
    "learning_rate": (float, 0.001, "Adam learning rate"),
    "minibatch_frames": (int, 64, "frames per minibatch for long sequences"),
    "full_batch_limit": (int, 256,
                         "train full-batch when the sequence has at most this many frames"),
    "online_stream": (int, 10, "frames per online stream"),
    "online_iters": (int, 200, "Adam iterations per online stream"),
    "pretrain_fraction": (float, 0.5,
                          "fraction of frames used to pretrain in online mode"),
    "threshold_factor": (float, 2.0, "mask threshold as a multiple of std(F)"),
    "prior_map": (_choice("sigma", "residual"), "sigma",
                  "prior map form (see core.prior_map_values)"),
}
DECOMPOSE_OPTIONS = {
    **COMMON_IO_OPTIONS,
    "threads": (int, 1, "cap on BLAS threads"),
}
EVAL_OPTIONS = {
    "pattern": (str, "*.png", "filename glob for masks"),
    "exclude_unknown": (_parse_bool, False,
                        "drop CDnet unknown/outside-ROI pixels from scoring"),
}
SYNTH_OPTIONS = {
    "seed": (int, 7, "fixture random seed"),
    "noise_std": (float, 0.01, "Gaussian pixel noise std"),
}


def read_config_file(path: Path) -> dict[str, str]:
    """Parse a ``key = value`` config file into a string dict."""
    values: dict[str, str] = {}
    try:
        lines = Path(path).read_text().splitlines()
    except OSError as exc:
        raise UsageError(f"cannot read config file {path}: {exc}") from exc
    for lineno, raw in enumerate(lines, 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise UsageError(f"{path}:{lineno}: expected 'key = value', got {raw!r}")
        key, _, val = line.partition("=")
        values[key.strip().replace("-", "_")] = val.strip()
    return values


def resolve_options(args: argparse.Namespace, table: dict) -> dict:
    """Merge CLI flags, config file, and defaults for one subcommand."""
    file_values: dict[str, str] = {}
    if getattr(args, "config", None):
        file_values = read_config_file(args.config)
        unknown = set(file_values) - set(table)
        if unknown:
            raise UsageError(
                f"unknown config keys: {', '.join(sorted(unknown))} "
                f"(valid: {', '.join(sorted(table))})"
            )
    resolved = {}
    for key, (convert, default, _help) in table.items():
        flag_value = getattr(args, key, None)
        if flag_value is not None:
            resolved[key] = flag_value
        elif key in file_values:
            try:
                resolved[key] = convert(file_values[key])
            except ValueError as exc:
                raise UsageError(f"config key {key}: {exc}") from exc
        else:
            resolved[key] = default
    return resolved


def _add_options(parser: argparse.ArgumentParser, table: dict) -> None:
    for key, (convert, default, help_text) in table.items():
        parser.add_argument(f"--{key.replace('_', '-')}", type=convert,
                            default=None, dest=key,
                            help=f"{help_text} (default: {default})")


# ---------------------------------------------------------------------------
# shared plumbing


@contextmanager
def _thread_cap(n: int | None):
    """Limit BLAS thread pools for the duration of a run, when possible."""
    if n is None or n < 1:
        yield
        return
    try:
        from threadpoolctl import threadpool_limits
    except ImportError:  # pragma: no cover - present in the test environment
        yield
        return
    with threadpool_limits(limits=n):
        yield


def _require_dir(path, what: str) -> Path:
    path = Path(path)
    if not path.is_dir():
        raise UsageError(f"{what} not found: {path}")
    return path


def _frames_dir(root: Path, pattern: str) -> Path:
    """Accept either a directory of frames or a dataset root with input/."""
    sub = root / "input"
    if sub.is_dir() and any(sub.glob(pattern)):
        return sub
    return root


def _jsonable(value):
    if isinstance(value, dict):
        return {k: _jsonable(v) for k, v in value.items()}
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    if isinstance(value, np.ndarray):
        return [_jsonable(v) for v in value.tolist()]
    if isinstance(value, np.generic):
        return value.item()
    return value


def write_json(path: Path, payload: dict) -> None:
    """Deterministic JSON: sorted keys, fixed layout, no timestamps."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(_jsonable(payload), indent=2, sort_keys=True) + "\n")


def _status(message: str) -> None:
    print(message, file=sys.stderr, flush=True)


def _invariant_model(seq: Sequence, cfg: dict) -> tuple[InvariantModel, bool]:
    """Build the invariant model, calibrating the angle unless given."""
    calibrated = cfg["angle"] is None
    if calibrated:
        theta = calibrate_direction(seq, epsilon_log=cfg["epsilon_log"])
    else:
        theta = cfg["angle"]
    model = InvariantModel(theta=theta, wiener_window=cfg["window"],
                           wiener_noise=cfg["noise"],
                           epsilon_log=cfg["epsilon_log"])
    return model, calibrated


def _invariant_section(model: InvariantModel | None, calibrated: bool,
                       source: str | None = None) -> dict:
    if model is None:
        return {"source": source}
    return {
        "theta": model.theta,
        "wiener_window": model.wiener_window,
        "wiener_noise": model.wiener_noise,
        "epsilon_log": model.epsilon_log,
        "calibrated": calibrated,
    }


def _write_decompositions(out: Path, seq: Sequence, decomps) -> None:
    w, h, c = seq.width, seq.height, seq.channels
    for fid, d in zip(seq.frame_ids, decomps):
        save_mask(d.mask, out / "masks" / f"{fid}.png")
        save_image(d.b_img, out / "background" / f"{fid}.png",
                   width=w, height=h, channels=c)
        save_image(d.c_img, out / "illumination" / f"{fid}.png",
                   width=w, height=h, channels=c, signed=True)
        save_image(d.f_img, out / "foreground" / f"{fid}.png",
                   width=w, height=h, channels=c, signed=True)


# ---------------------------------------------------------------------------
# subcommands


def cmd_synth(args: argparse.Namespace) -> int:
    cfg = resolve_options(args, SYNTH_OPTIONS)
    out = Path(args.out)
    config = standard_fixture_config()
    config.seed = cfg["seed"]
    config.noise_std = cfg["noise_std"]
    seq, gt, events = generate(config)
    for frame, mask, fid in zip(seq.frames, gt.masks, seq.frame_ids):
        save_image(frame, out / "input" / f"{fid}.png")
        save_mask(mask, out / "groundtruth" / f"{fid}.png")
    write_json(out / "events.json", {"config": asdict(config), "events": events})
    print(f"wrote {len(seq)} frames to {out}")
    return 0


def cmd_invariant(args: argparse.Namespace) -> int:
    cfg = resolve_options(args, {**COMMON_IO_OPTIONS, **INVARIANT_OPTIONS})
    input_dir = _require_dir(args.input, "input directory")
    out = Path(args.out)
    seq = load_sequence(_frames_dir(input_dir, cfg["pattern"]), cfg["pattern"],
                        max_side=cfg["max_side"])
    model, calibrated = _invariant_model(seq, cfg)
    for fid, frame in zip(seq.frame_ids, psi_sequence(seq, model)):
        save_image(frame.as_array(), out / f"{fid}.png")
    write_json(out / "manifest.json", {
        "command": "invariant",
        "version": __version__,
        "n_frames": len(seq),
        "invariant": _invariant_section(model, calibrated),
    })
    print(f"wrote {len(seq)} invariant images to {out} (theta={model.theta:.4f})")
    return 0


def _load_invariant_dir(path, seq: Sequence, pattern: str) -> list[np.ndarray]:
    inv_seq = load_sequence(path, pattern)
    if len(inv_seq) != len(seq):
        raise DatasetError(
            f"{len(inv_seq)} invariant images for {len(seq)} frames"
        )
    if (inv_seq.channels != 1 or inv_seq.width != seq.width
            or inv_seq.height != seq.height):
        raise DatasetError("invariant images must be single-channel and match "
                           "the frame dimensions")
    return [f.data for f in inv_seq.frames]


def cmd_train(args: argparse.Namespace) -> int:
    cfg = resolve_options(args, TRAIN_OPTIONS)
    input_dir = _require_dir(args.input, "input directory")
    if args.invariant_dir is not None:
        _require_dir(args.invariant_dir, "invariant directory")
    out = Path(args.out)
    seq = load_sequence(_frames_dir(input_dir, cfg["pattern"]), cfg["pattern"],
                        max_side=cfg["max_side"])
    n = len(seq)
    train_config = TrainConfig(
        latent_size=cfg["latent_size"],
        weight_decay=cfg["weight_decay"],
        learning_rate=cfg["learning_rate"],
        epochs=cfg["epochs"],
        minibatch_frames=cfg["minibatch_frames"],
        full_batch_limit=cfg["full_batch_limit"],
        online_stream=cfg["online_stream"],
        online_iters=cfg["online_iters"],
        pretrain_fraction=cfg["pretrain_fraction"],
        threshold_factor=cfg["threshold_factor"],
        prior_map_mode=cfg["prior_map"],
        seed=cfg["seed"],
    )

    with _thread_cap(cfg["threads"]):
        if args.invariant_dir is not None:
            model, calibrated = None, False
            inv = _load_invariant_dir(args.invariant_dir, seq, cfg["pattern"])
        else:
            model, calibrated = _invariant_model(seq, cfg)
            inv = psi_sequence(seq, model)
            _status(f"[train] invariant direction theta={model.theta:.4f} "
                    f"({'calibrated' if calibrated else 'given'})")

        def on_epoch(epoch, parts):
            if epoch % 50 == 0 or epoch == train_config.epochs:
                _status(f"[train] epoch {epoch}/{train_config.epochs} "
                        f"loss={parts['total']:.3f}")

        if cfg["mode"] == "batch":
            result = train_batch(seq, inv, train_config, progress=on_epoch)
            decomps = result.decompositions
            sigmas = result.sigmas
            threshold = result.threshold
            loss_history = result.loss_history
            stream_log = []
            pretrain_frames = n
            running = RunningStd()
            running.update(np.stack([d.f_img for d in decomps]))
            warm = (result.variables[-1].u1, result.variables[-1].u2)
            net1, net2 = result.net1, result.net2
            adam1, adam2 = result.adam_net1, result.adam_net2
        else:
            if n < 2:
                raise UsageError("online mode needs at least 2 frames")
            n_pre = min(max(int(round(n * train_config.pretrain_fraction)), 1),
                        n - 1)
            pre_seq = Sequence(frames=seq.frames[:n_pre],
                               frame_ids=seq.frame_ids[:n_pre])
            rest_seq = Sequence(frames=seq.frames[n_pre:],
                                frame_ids=seq.frame_ids[n_pre:])
            _status(f"[train] online: pretraining on {n_pre} frames")
            pre = train_batch(pre_seq, inv[:n_pre], train_config,
                              progress=on_epoch)
            running = RunningStd()
            running.update(np.stack([d.f_img for d in pre.decompositions]))
            warm = (pre.variables[-1].u1, pre.variables[-1].u2)

            def on_stream(k, entry):
                _status(f"[train] stream {k} frames {entry['frames']} "
                        f"loss={entry['loss_final']:.3f}")

            online = train_online(pre.net1, pre.net2, rest_seq, inv[n_pre:],
                                  train_config, warm_start=warm,
                                  running_std=running, progress=on_stream)
            decomps = pre.decompositions + online.decompositions
            sigmas = np.concatenate([
                pre.sigmas,
                [float(np.std(np.asarray(f.data if hasattr(f, "data") else f)))
                 for f in inv[n_pre:]],
            ])
            threshold = online.stream_log[-1]["threshold"]
            loss_history = pre.loss_history
            stream_log = online.stream_log
            pretrain_frames = n_pre
            warm = online.warm_latents
            net1, net2 = pre.net1, pre.net2
            adam1, adam2 = pre.adam_net1, pre.adam_net2

    _write_decompositions(out, seq, decomps)
    frame_shape = (seq.height, seq.width, seq.channels)
    save_checkpoint(out / "checkpoint.npz", net1=net1, net2=net2,
                    config=train_config, frame_shape=frame_shape,
                    invariant_model=model, adam_net1=adam1, adam_net2=adam2,
                    warm_latents=warm, running_std=running,
                    threshold=threshold)
    write_json(out / "manifest.json", {
        "command": "train",
        "version": __version__,
        "mode": cfg["mode"],
        "seed": cfg["seed"],
        "threads": cfg["threads"],
        "n_frames": n,
        "pretrain_frames": pretrain_frames,
        "frame_shape": list(frame_shape),
        "frame_ids": seq.frame_ids,
        "config": asdict(train_config),
        "invariant": _invariant_section(
            model, calibrated,
            source=str(args.invariant_dir) if args.invariant_dir else None),
        "sigmas": [float(s) for s in sigmas],
        "threshold": threshold,
        "loss_history": loss_history,
        "stream_log": stream_log,
        "weights_checksum": {"net1": weights_checksum(net1),
                             "net2": weights_checksum(net2)},
    })
    print(f"wrote masks and decompositions for {n} frames to {out} "
          f"(threshold t={threshold:.6f})")
    return 0


def cmd_decompose(args: argparse.Namespace) -> int:
    cfg = resolve_options(args, DECOMPOSE_OPTIONS)
    input_dir = _require_dir(args.input, "input directory")
    ckpt_path = Path(args.checkpoint)
    if not ckpt_path.is_file():
        raise UsageError(f"checkpoint not found: {ckpt_path}")
    out = Path(args.out)
    ckpt = load_checkpoint(ckpt_path)
    if ckpt.invariant_model is None:
        raise UsageError("checkpoint lacks an invariant model; re-run train "
                         "without --invariant-dir to embed one")
    seq = load_sequence(_frames_dir(input_dir, cfg["pattern"]), cfg["pattern"],
                        max_side=cfg["max_side"])
    checksums_before = {"net1": weights_checksum(ckpt.net1),
                        "net2": weights_checksum(ckpt.net2)}
    with _thread_cap(cfg["threads"]):
        inv = psi_sequence(seq, ckpt.invariant_model)
        result = train_online(ckpt.net1, ckpt.net2, seq, inv, ckpt.config,
                              warm_start=ckpt.warm_latents,
                              running_std=ckpt.running_std or RunningStd())
    _write_decompositions(out, seq, result.decompositions)
    threshold = result.stream_log[-1]["threshold"]
    save_checkpoint(out / "checkpoint.npz", net1=ckpt.net1, net2=ckpt.net2,
                    config=ckpt.config, frame_shape=ckpt.frame_shape,
                    invariant_model=ckpt.invariant_model,
                    adam_net1=ckpt.adam_net1, adam_net2=ckpt.adam_net2,
                    warm_latents=result.warm_latents,
                    running_std=result.running_std, threshold=threshold)
    write_json(out / "manifest.json", {
        "command": "decompose",
        "version": __version__,
        "checkpoint": str(ckpt_path),
        "n_frames": len(seq),
        "frame_ids": seq.frame_ids,
        "config": asdict(ckpt.config),
        "stream_log": result.stream_log,
        "threshold": threshold,
        "weights_checksum_before": checksums_before,
        "weights_checksum_after": {"net1": weights_checksum(ckpt.net1),
                                   "net2": weights_checksum(ckpt.net2)},
    })
    print(f"decomposed {len(seq)} frames to {out} (threshold t={threshold:.6f})")
    return 0


def _normalized_ids(frame_ids: list[str]) -> list[str]:
    """Strip non-digit filename prefixes so in000042 matches gt000042."""
    out = []
    for fid in frame_ids:
        digits = "".join(ch for ch in fid if ch.isdigit())
        out.append(digits if digits else fid)
    return out


def cmd_eval(args: argparse.Namespace) -> int:
    cfg = resolve_options(args, EVAL_OPTIONS)
    pred_dir = _require_dir(args.pred, "prediction directory")
    gt_dir = _require_dir(args.gt, "ground-truth directory")
    out = Path(args.out)
    pred = load_masks(pred_dir, cfg["pattern"])
    gt = load_masks(gt_dir, cfg["pattern"], exclude_unknown=cfg["exclude_unknown"])
    pred_ids = _normalized_ids(pred.frame_ids)
    gt_ids = _normalized_ids(gt.frame_ids)
    if pred_ids != gt_ids:
        missing = sorted(set(gt_ids) ^ set(pred_ids))
        raise DatasetError(
            "prediction and ground-truth frame sets differ: "
            + ", ".join(missing[:20])
            + ("..." if len(missing) > 20 else "")
        )
    scores = score_frames(pred.masks, gt.masks, roi=gt.roi)
    try:
        overall = f_measure_sequence(scores)
    except NoEvaluableFramesError:
        overall = None

    out.mkdir(parents=True, exist_ok=True)
    def fmt(v):
        return "" if v is None else f"{v:.6f}"

    with open(out / "per_frame.csv", "w", newline="") as fh:
        writer = csv.writer(fh)
        writer.writerow(["frame_id", "tp", "fp", "fn", "tn",
                         "precision", "recall", "f_measure"])
        for fid, sc in zip(pred.frame_ids, scores):
            writer.writerow([fid, sc.tp, sc.fp, sc.fn, sc.tn,
                             fmt(sc.precision), fmt(sc.recall),
                             fmt(sc.f_measure)])
    defined = [s.f_measure for s in scores if s.f_measure is not None]
    write_json(out / "summary.json", {
        "command": "eval",
        "version": __version__,
        "n_frames": len(scores),
        "frames_evaluated": len(defined),
        "frames_skipped": len(scores) - len(defined),
        "f_measure": overall,
    })
    if overall is None:
        print("no evaluable frames (all ground truth and predictions empty)")
    else:
        print(f"F-measure: {overall:.4f} over {len(defined)} frames")
    return 0


# ---------------------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="illumov",
        description="Illumination-robust moving object detection by "
                    "background/illumination/foreground decomposition.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command")

    p = sub.add_parser("synth", help="render the standard synthetic benchmark")
    p.add_argument("--out", required=True, help="output dataset directory")
    p.add_argument("--config", default=None, help="key = value config file")
    _add_options(p, SYNTH_OPTIONS)
    p.set_defaults(func=cmd_synth)

    p = sub.add_parser("invariant", help="write illumination-invariant images")
    p.add_argument("--input", required=True, help="frame directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="key = value config file")
    _add_options(p, {**COMMON_IO_OPTIONS, **INVARIANT_OPTIONS})
    p.set_defaults(func=cmd_invariant)

    p = sub.add_parser("train", help="train and decompose a sequence")
    p.add_argument("--input", required=True,
                   help="frame directory (or dataset root with input/)")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="key = value config file")
    p.add_argument("--invariant-dir", default=None,
                   help="precomputed invariant images (skips calibration)")
    _add_options(p, TRAIN_OPTIONS)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("decompose",
                       help="apply a checkpoint to new frames (online fitting)")
    p.add_argument("--checkpoint", required=True, help="checkpoint.npz from train")
    p.add_argument("--input", required=True, help="frame directory")
    p.add_argument("--out", required=True, help="output directory")
    p.add_argument("--config", default=None, help="key = value config file")
    _add_options(p, DECOMPOSE_OPTIONS)
    p.set_defaults(func=cmd_decompose)

    p = sub.add_parser("eval", help="score predicted masks against ground truth")
    p.add_argument("--pred", required=True, help="predicted mask directory")
    p.add_argument("--gt", required=True, help="ground-truth mask directory")
    p.add_argument("--out", required=True, help="report output directory")
    p.add_argument("--config", default=None, help="key = value config file")
    _add_options(p, EVAL_OPTIONS)
    p.set_defaults(func=cmd_eval)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    if not hasattr(args, "func"):
        parser.print_help(sys.stderr)
        return 2
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except (DatasetError, TrainingDivergedError, NoEvaluableFramesError,
            ValueError, OSError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
