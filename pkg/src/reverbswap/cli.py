"""Command-line entry points for the full pipeline.

    reverbswap synth-data   freeze reverb presets and a quad manifest
    reverbswap train        run the optimization loop over a manifest
    reverbswap convert      apply a reference track's reverb to an input
    reverbswap dereverb     remove reverb using a dry reference
    reverbswap evaluate     conversion table / de-reverberation gamma sweep

Exit codes: 0 success, 1 user error, 2 internal error. Every command prints
its effective configuration (config-file values overridden by flags) and
mirrors it to run.log next to its outputs.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import asdict
from pathlib import Path

import numpy as np

from . import databus, metrics, reverb, training
from .audio import Waveform, load_canonical, resample, save_wav, to_stereo, wav_info
from .databus import mix_bus
from .inference import convert_waveform
from .model import ModelConfig, load_checkpoint
from .stft import StftConfig

DEREVERB_GAMMAS = (0.1, 0.2, 0.3, 0.4, 0.5, 0.6, 0.7)


class UserError(Exception):
    """Invalid input or arguments; reported without a traceback."""


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2; these are user errors
        self.print_usage(sys.stderr)
        raise UserError(message)


def _effective_config(args, keys: list[str]) -> dict:
    """Start from parser values, let an optional JSON config file fill the
    gaps, and keep explicitly passed flags on top."""
    file_vals = {}
    if getattr(args, "config", None):
        try:
            file_vals = json.loads(Path(args.config).read_text())
        except (OSError, json.JSONDecodeError) as exc:
            raise UserError(f"cannot read config file {args.config}: {exc}") from exc
    effective = {}
    for key in keys:
        cli_val = getattr(args, key)
        if cli_val is not None:
            effective[key] = cli_val
        elif key in file_vals:
            effective[key] = file_vals[key]
        else:
            effective[key] = None
    return effective


def _echo_config(command: str, cfg: dict, out_dir: Path | None) -> None:
    lines = [f"{command}.{k} = {v}" for k, v in sorted(cfg.items())]
    print("\n".join(lines))
    if out_dir is not None:
        out_dir.mkdir(parents=True, exist_ok=True)
        (out_dir / "run.log").write_text("\n".join(lines) + "\n")


def _scan_corpus(corpus_dir: Path, min_frames: int) -> list[tuple[str, int]]:
    if not corpus_dir.is_dir():
        raise UserError(f"corpus directory not found: {corpus_dir}")
    sources = []
    for path in sorted(corpus_dir.glob("*.wav")):
        frames, rate, _ = wav_info(path)
        if rate != 44100:
            raise UserError(f"{path}: corpus files must be 44.1 kHz (got {rate})")
        if frames >= min_frames:
            sources.append((str(path), frames))
    if len(sources) < 2:
        raise UserError(
            f"corpus too small: need >= 2 WAV files of >= {min_frames} frames "
            f"({min_frames / 44100:.2f} s), found {len(sources)}"
        )
    return sources


def cmd_synth_data(args) -> int:
    cfg = _effective_config(
        args, ["corpus", "out", "quads", "val_quads", "seed", "clip_frames", "train_presets", "val_presets"]
    )
    defaults = {"quads": 64, "val_quads": 8, "seed": 0, "clip_frames": 640,
                "train_presets": 36, "val_presets": 4}
    for k, v in defaults.items():
        if cfg[k] is None:
            cfg[k] = v
    if cfg["corpus"] is None or cfg["out"] is None:
        raise UserError("synth-data requires --corpus and --out")
    out_dir = Path(cfg["out"])
    _echo_config("synth-data", cfg, out_dir)

    hop = StftConfig().hop
    clip_len = cfg["clip_frames"] * hop
    sources = _scan_corpus(Path(cfg["corpus"]), clip_len)

    train_presets = [reverb.sample_preset(reverb.TRAIN_SPACE, cfg["seed"] + i)
                     for i in range(cfg["train_presets"])]
    val_presets = [reverb.sample_preset(reverb.VAL_SPACE, cfg["seed"] + i)
                   for i in range(cfg["val_presets"])]
    reverb.write_presets(train_presets, out_dir / "presets_train.jsonl")
    reverb.write_presets(val_presets, out_dir / "presets_val.jsonl")

    train_quads = databus.make_dataset(sources, train_presets, cfg["quads"], cfg["seed"], clip_len)
    val_quads = databus.make_dataset(sources, val_presets, cfg["val_quads"], cfg["seed"] + 1, clip_len)
    databus.write_manifest(train_quads, out_dir / "quads_train.jsonl")
    databus.write_manifest(val_quads, out_dir / "quads_val.jsonl")
    print(f"wrote {len(train_quads)} train quads, {len(val_quads)} val quads, "
          f"{len(train_presets)}/{len(val_presets)} presets -> {out_dir}")
    return 0


def _parse_channels(spec: str) -> tuple[int, ...]:
    try:
        return tuple(int(c) for c in spec.split(","))
    except ValueError as exc:
        raise UserError(f"bad --channels list: {spec}") from exc


def cmd_train(args) -> int:
    keys = ["manifest", "presets", "out", "epochs", "batch_size", "lr", "adv_start",
            "seed", "clip_frames", "channels", "grad_clip", "threads"]
    cfg = _effective_config(args, keys)
    defaults = {"epochs": 100, "batch_size": 4, "lr": 1e-3, "adv_start": 20,
                "seed": 0, "clip_frames": 640, "channels": "32,64,128,256,512",
                "grad_clip": 5.0, "threads": 0}
    for k, v in defaults.items():
        if cfg[k] is None:
            cfg[k] = v
    if cfg["manifest"] is None or cfg["out"] is None:
        raise UserError("train requires --manifest and --out")
    if cfg["presets"] is None:
        cfg["presets"] = str(Path(cfg["manifest"]).parent / "presets_train.jsonl")
    cfg["redraw_gamma"] = not args.no_redraw_gamma
    cfg["resume"] = args.resume
    out_dir = Path(cfg["out"])
    _echo_config("train", cfg, out_dir)

    if cfg["threads"]:
        import torch

        torch.set_num_threads(int(cfg["threads"]))

    manifest_path = Path(cfg["manifest"])
    if not manifest_path.exists():
        raise UserError(f"manifest not found: {manifest_path}")
    quads = databus.read_manifest(manifest_path)
    if not quads:
        raise UserError(f"manifest is empty: {manifest_path}")
    presets_path = Path(cfg["presets"])
    if not presets_path.exists():
        raise UserError(f"preset manifest not found: {presets_path}")
    presets = {p.preset_id: p for p in reverb.read_presets(presets_path)}

    channels = _parse_channels(cfg["channels"])
    train_cfg = training.TrainConfig(
        lr=float(cfg["lr"]),
        adv_start_epoch=int(cfg["adv_start"]),
        total_epochs=int(cfg["epochs"]),
        batch_size=int(cfg["batch_size"]),
        seed=int(cfg["seed"]),
        grad_clip=None if float(cfg["grad_clip"]) <= 0 else float(cfg["grad_clip"]),
        redraw_gamma=cfg["redraw_gamma"],
        clip_frames=int(cfg["clip_frames"]),
    )
    model_cfg = ModelConfig(channels=channels, time_frames=train_cfg.clip_frames)
    try:
        final = training.train(quads, presets, train_cfg, out_dir,
                               model_cfg=model_cfg, resume=cfg["resume"])
    except training.TrainingDiverged as exc:
        print(f"training diverged: {exc}; last good checkpoint kept in {out_dir}", file=sys.stderr)
        return 2
    print(f"final checkpoint: {final}")
    return 0


def _load_for_inference(path: str, allow_resample: bool) -> tuple[Waveform, int, int]:
    """Returns (canonical stereo waveform, original rate, original channels)."""
    from .audio import load_wav

    raw = load_wav(path)
    w = to_stereo(raw) if raw.sample_rate == 44100 else load_canonical(path, allow_resample)
    return w, raw.sample_rate, raw.n_channels


def _run_conversion(args, reference_path: str, missing_ref_message: str) -> int:
    cfg = _effective_config(args, ["input", "ckpt", "out"])
    if reference_path is None:
        raise UserError(missing_ref_message)
    if cfg["input"] is None or cfg["ckpt"] is None or cfg["out"] is None:
        raise UserError("need --input, --ckpt and --out")
    _echo_config(args.command, {**cfg, "reference": reference_path}, None)

    if not Path(cfg["ckpt"]).exists():
        raise UserError(f"checkpoint not found: {cfg['ckpt']}")
    net, _, _ = load_checkpoint(cfg["ckpt"])
    input_wave, orig_rate, orig_channels = _load_for_inference(cfg["input"], args.resample)
    ref_wave, _, _ = _load_for_inference(reference_path, args.resample)

    out = convert_waveform(net, input_wave, ref_wave)
    if orig_rate != out.sample_rate:
        out = resample(out, orig_rate)
    if orig_channels == 1:
        out = Waveform(out.samples.mean(axis=0, keepdims=True), out.sample_rate)
    save_wav(out, cfg["out"])
    print(f"wrote {cfg['out']}")
    return 0


def cmd_convert(args) -> int:
    return _run_conversion(args, args.reference, "convert requires --reference")


def cmd_dereverb(args) -> int:
    return _run_conversion(
        args,
        args.dry_ref,
        "dereverb requires --dry-ref: supply any dry (unreverberated) vocal clip "
        "to use as the gamma=0 reference",
    )


def _segment_clip(path: str, offset: int, clip_len: int) -> Waveform:
    w = load_canonical(path)
    seg = w.samples[:, offset : offset + clip_len]
    if seg.shape[1] < clip_len:
        seg = np.pad(seg, ((0, 0), (0, clip_len - seg.shape[1])))
    return Waveform(samples=seg, sample_rate=w.sample_rate)


def cmd_evaluate(args) -> int:
    keys = ["ckpt", "val_manifest", "presets", "mode", "out", "max_items", "pesq_cmd"]
    cfg = _effective_config(args, keys)
    if cfg["mode"] is None:
        cfg["mode"] = "conversion"
    if cfg["max_items"] is None:
        cfg["max_items"] = 8
    for required in ("ckpt", "val_manifest", "out"):
        if cfg[required] is None:
            raise UserError(f"evaluate requires --{required.replace('_', '-')}")
    if cfg["presets"] is None:
        cfg["presets"] = str(Path(cfg["val_manifest"]).parent / "presets_val.jsonl")
    out_dir = Path(cfg["out"])
    _echo_config("evaluate", cfg, out_dir)

    quads = databus.read_manifest(Path(cfg["val_manifest"]))
    if not quads:
        raise UserError(f"validation manifest is empty: {cfg['val_manifest']}")
    quads = quads[: int(cfg["max_items"])]
    presets = {p.preset_id: p for p in reverb.read_presets(Path(cfg["presets"]))}
    net, _, meta = load_checkpoint(cfg["ckpt"])
    clip_len = net.cfg.time_frames * StftConfig().hop

    if cfg["mode"] == "conversion":
        items = []
        for q in quads:
            dry_a = _segment_clip(q.source_a, q.segment_offset, clip_len)
            dry_b = _segment_clip(q.source_b, q.segment_offset, clip_len)
            quad = databus.build_quad(dry_a, dry_b, presets[q.preset_1], presets[q.preset_2],
                                      q.gamma_1, q.gamma_2)
            output = convert_waveform(net, quad.in_a.audio, quad.in_b.audio)
            items.append((q.quad_id, output, quad.in_a.audio, quad.gt_a.audio))
        rows = metrics.eval_conversion(items, pesq_command=cfg["pesq_cmd"])
    elif cfg["mode"] == "dereverb":
        items = []
        for q in quads:
            dry_a = _segment_clip(q.source_a, q.segment_offset, clip_len)
            dry_b = _segment_clip(q.source_b, q.segment_offset, clip_len)
            p1 = presets[q.preset_1]
            for gamma in DEREVERB_GAMMAS:
                mixed = mix_bus(dry_a, reverb.render_wet(dry_a, p1), gamma)
                output = convert_waveform(net, mixed, dry_b)
                items.append((q.quad_id, gamma, mixed, output, dry_a))
        rows = metrics.eval_dereverb(items, pesq_command=cfg["pesq_cmd"])
    else:
        raise UserError(f"unknown mode {cfg['mode']!r}; expected conversion or dereverb")

    metrics.write_report(rows, out_dir / "report.txt", out_dir / "report.jsonl")
    print(metrics.format_report(rows))
    print(f"reports written to {out_dir}")
    return 0


def build_parser() -> _Parser:
    parser = _Parser(prog="reverbswap", description=__doc__,
                     formatter_class=argparse.RawDescriptionHelpFormatter)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("synth-data", help="freeze presets and quad manifests from a dry corpus")
    p.add_argument("--corpus", help="directory of dry 44.1 kHz WAV files")
    p.add_argument("--out", help="output directory for manifests")
    p.add_argument("--quads", type=int, help="training quads to draw (default 64)")
    p.add_argument("--val-quads", type=int, dest="val_quads", help="validation quads (default 8)")
    p.add_argument("--seed", type=int)
    p.add_argument("--clip-frames", type=int, dest="clip_frames", help="STFT frames per clip (default 640 = 7.43 s)")
    p.add_argument("--train-presets", type=int, dest="train_presets", help="default 36")
    p.add_argument("--val-presets", type=int, dest="val_presets", help="default 4")
    p.add_argument("--config", help="JSON config file; flags override its values")
    p.set_defaults(func=cmd_synth_data)

    p = sub.add_parser("train", help="train on a quad manifest")
    p.add_argument("--manifest")
    p.add_argument("--presets", help="preset manifest (default: sibling presets_train.jsonl)")
    p.add_argument("--out", help="checkpoint directory")
    p.add_argument("--epochs", type=int)
    p.add_argument("--batch-size", type=int, dest="batch_size")
    p.add_argument("--lr", type=float)
    p.add_argument("--adv-start", type=int, dest="adv_start", help="epoch the adversarial terms activate (default 20)")
    p.add_argument("--seed", type=int)
    p.add_argument("--clip-frames", type=int, dest="clip_frames")
    p.add_argument("--channels", help="comma-separated encoder widths (default 32,64,128,256,512)")
    p.add_argument("--grad-clip", type=float, dest="grad_clip", help="<=0 disables clipping")
    p.add_argument("--threads", type=int, help="torch CPU threads (0 = leave default)")
    p.add_argument("--resume", action="store_true", help="continue from the latest checkpoint in --out")
    p.add_argument("--no-redraw-gamma", action="store_true",
                   help="keep manifest gammas fixed instead of redrawing per epoch")
    p.add_argument("--config")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("convert", help="apply a reference's reverb to an input track")
    p.add_argument("--input")
    p.add_argument("--reference")
    p.add_argument("--ckpt")
    p.add_argument("--out")
    p.add_argument("--resample", action="store_true", help="accept non-44.1 kHz inputs")
    p.add_argument("--config")
    p.set_defaults(func=cmd_convert)

    p = sub.add_parser("dereverb", help="remove reverb using a dry reference")
    p.add_argument("--input")
    p.add_argument("--dry-ref", dest="dry_ref")
    p.add_argument("--ckpt")
    p.add_argument("--out")
    p.add_argument("--resample", action="store_true")
    p.add_argument("--config")
    p.set_defaults(func=cmd_dereverb)

    p = sub.add_parser("evaluate", help="run the conversion table or the de-reverberation sweep")
    p.add_argument("--ckpt")
    p.add_argument("--val-manifest", dest="val_manifest")
    p.add_argument("--presets", help="validation preset manifest (default: sibling presets_val.jsonl)")
    p.add_argument("--mode", choices=["conversion", "dereverb"])
    p.add_argument("--out", help="report directory")
    p.add_argument("--max-items", type=int, dest="max_items")
    p.add_argument("--pesq-cmd", dest="pesq_cmd",
                   help="external PESQ command, fed (ref.wav, deg.wav) at 16 kHz")
    p.add_argument("--config")
    p.set_defaults(func=cmd_evaluate)

    return parser


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        return args.func(args)
    except UserError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except (FileNotFoundError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except KeyboardInterrupt:
        return 1
    except Exception:
        traceback.print_exc()
        return 2


if __name__ == "__main__":
    sys.exit(main())
