"""Command-line entry point: ``diformer <subcommand>``.

Subcommands: synth-data, pretrain-encoder, train, infer, eval, plot.
Global flags ``--config``, ``--seed``, ``--out`` and ``--profile`` come before
the subcommand. Every command that writes outputs also writes the fully
resolved configuration to ``<out>/config.txt``.
"""
from __future__ import annotations

import argparse
import json
import logging
import sys
from pathlib import Path
from typing import List, Optional

import numpy as np
import torch

from .config import RunConfig, load_config
from .der import (
    RttmSegment,
    aggregate,
    compute_der,
    format_table,
    group_by_file,
    parse_rttm,
    write_rttm,
)
from .encoder import SpeakerEncoder, pretrain_encoder
from .errors import DiformerError, RefusesOverwrite
from .features import read_wav
from .inference import run_windows, stitch
from .model import DiFormer
from .supervision import (
    FRAME_SECONDS,
    SceneSpec,
    SpeechSegment,
    build_masks,
    clips_to_logmel,
    read_manifest,
    speaker_clips,
    write_dataset,
)
from .train import load_checkpoint, prepare_examples, train

logger = logging.getLogger("diformer")

GENERATED_PATTERNS = ("scene_*.wav", "scene_*.rttm", "manifest.tsv")


def _echo_config(config: RunConfig, out: Path) -> None:
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.txt").write_text(config.dumps())


def pretrain_speaker_ids(config: RunConfig) -> List[str]:
    return [f"spk{i:04d}" for i in range(config.pretrain_speakers)]


def cmd_synth_data(config: RunConfig, out, force: bool = False) -> Path:
    out = Path(out)
    if out.exists() and any(out.iterdir()):
        if not force:
            raise RefusesOverwrite(f"{out} is not empty; pass --force to regenerate")
        for pattern in GENERATED_PATTERNS:
            for path in out.glob(pattern):
                path.unlink()
    specs = [
        SceneSpec(num_speakers=config.num_speakers, total_duration=config.scene_seconds,
                  overlap_ratio=config.overlap_ratio, seed=config.seed + i,
                  speaker_pool=config.speaker_pool)
        for i in range(config.num_scenes)
    ]
    write_dataset(out, specs)
    _echo_config(config, out)
    return out


def cmd_pretrain_encoder(config: RunConfig, out) -> Path:
    out = Path(out)
    _echo_config(config, out)
    speakers = pretrain_speaker_ids(config)
    clips, labels = speaker_clips(speakers, config.pretrain_clips, config.pretrain_clip_seconds, config.seed)
    val_clips, val_labels = speaker_clips(speakers, 4, config.pretrain_clip_seconds, config.seed + 1)
    result = pretrain_encoder(
        clips_to_logmel(clips), labels, config.encoder_config(), epochs=config.pretrain_epochs,
        lr=config.pretrain_lr, batch_size=config.pretrain_batch_size, seed=config.seed,
        val_specs=clips_to_logmel(val_clips), val_labels=val_labels,
    )
    path = out / "encoder.bin"
    result.encoder.save(path)
    with open(out / "pretrain_log.jsonl", "w") as f:
        for entry in result.history:
            f.write(json.dumps(entry) + "\n")
        f.write(json.dumps({"val_accuracy": result.val_accuracy}) + "\n")
    logger.info("encoder written to %s (held-out clip accuracy %.3f)", path, result.val_accuracy)
    return path


def load_recordings(data_dir):
    recordings = []
    for wav_path, rttm_path, _ in read_manifest(data_dir):
        segs = [SpeechSegment(s.speaker, s.onset, s.duration) for s in parse_rttm(rttm_path.read_text())]
        recordings.append((wav_path.stem, read_wav(wav_path), segs))
    return recordings


def cmd_train(config: RunConfig, data_dir, encoder_path, out, resume=None):
    out = Path(out)
    encoder = SpeakerEncoder.load(encoder_path, expected_config=config.encoder_config())
    examples, skipped = prepare_examples(load_recordings(data_dir), encoder, config)
    if skipped:
        logger.warning("skipped %d windows with more speakers than %d slots", skipped, config.num_queries)
    torch.manual_seed(config.seed)
    model = DiFormer(config, encoder)
    result = train(model, examples, config, out_dir=out, resume_from=resume)
    with open(out / "metrics.jsonl", "a") as f:
        f.write(json.dumps({"skipped_windows": skipped}) + "\n")
    return result


def diarize_file(audio_path, model: DiFormer, config: RunConfig):
    audio = read_wav(audio_path)
    preds = run_windows(audio, model, config.window_seconds, config.hop_seconds,
                        config.mask_threshold, config.vad_threshold)
    segments = stitch(preds, config.stitch_threshold, config.update_representatives)
    return audio, preds, segments


def cmd_infer(audio_path, checkpoint, out, config: Optional[RunConfig] = None, file_id=None) -> Path:
    model, header, _ = load_checkpoint(checkpoint)
    config = config or model.config
    model.eval()
    _, _, segments = diarize_file(audio_path, model, config)
    file_id = file_id or Path(audio_path).stem
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    path = out / f"{file_id}.rttm"
    path.write_text(write_rttm(RttmSegment(file_id, s.onset, s.duration, s.speaker_id) for s in segments))
    _echo_config(config, out)
    return path


def cmd_eval(ref_path, hyp_path, collar: float = 0.0, ignore_overlap: bool = False):
    """Score every file id; returns per-file reports followed by the aggregate.

    A reference file without hypothesis lines is scored against an empty
    hypothesis; hypothesis ids unknown to the reference are an error.
    """
    ref = group_by_file(parse_rttm(Path(ref_path).read_text()))
    hyp = group_by_file(parse_rttm(Path(hyp_path).read_text()))
    if set(hyp) - set(ref):
        raise DiformerError(f"file ids differ: reference {sorted(ref)} vs hypothesis {sorted(hyp)}")
    reports = [compute_der(ref[f], hyp.get(f, []), collar, ignore_overlap) for f in sorted(ref)]
    for r, f in zip(reports, sorted(ref)):
        r.file_id = f
    return reports + [aggregate(reports)]


def cmd_plot(audio_path, out, checkpoint=None, rttm=None, ref=None, config: Optional[RunConfig] = None):
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    from .plotting import plot_heatmap, plot_timeline

    ref_segs = None
    if ref is not None:
        ref_segs = [SpeechSegment(s.speaker, s.onset, s.duration) for s in parse_rttm(Path(ref).read_text())]
    if checkpoint is not None:
        model, _, _ = load_checkpoint(checkpoint)
        config = config or model.config
        audio, preds, segments = diarize_file(audio_path, model, config)
        heat = np.concatenate([p.mask_probs for p in preds], axis=1)
        t_m = int(np.ceil(audio.duration / FRAME_SECONDS))
        heat = heat[:, :t_m]
    elif rttm is not None:
        audio = read_wav(audio_path)
        segments = [SpeechSegment(s.speaker, s.onset, s.duration) for s in parse_rttm(Path(rttm).read_text())]
        heat, _ = build_masks(segments, int(np.ceil(audio.duration / FRAME_SECONDS)))
    else:
        raise DiformerError("plot needs --checkpoint or --rttm")
    paths = [plot_heatmap(heat, out / "heatmap.png"),
             plot_timeline(segments, out / "timeline.png", audio.duration, ref_segs)]
    if config is not None:
        _echo_config(config, out)
    return paths


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="diformer", description="Speaker diarization with a set-prediction transformer.")
    p.add_argument("--config", help="flat key = value config file")
    p.add_argument("--seed", type=int)
    p.add_argument("--out", help="output directory (default: ./out)")
    p.add_argument("--profile", default="desk", choices=("desk", "paper"))
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    s = sub.add_parser("synth-data", help="generate a synthetic WAV + RTTM dataset")
    s.add_argument("--num-scenes", type=int)
    s.add_argument("--force", action="store_true", help="regenerate into a non-empty directory")

    sub.add_parser("pretrain-encoder", help="pretrain the speaker encoder on synthetic speakers")

    s = sub.add_parser("train", help="train the diarization model")
    s.add_argument("--data", required=True, help="dataset directory with manifest.tsv")
    s.add_argument("--encoder", required=True, help="pretrained encoder archive")
    s.add_argument("--steps", type=int)
    s.add_argument("--lr", type=float)
    s.add_argument("--resume", help="checkpoint to continue from")

    s = sub.add_parser("infer", help="diarize a WAV file into RTTM")
    s.add_argument("audio")
    s.add_argument("--checkpoint", required=True)

    s = sub.add_parser("eval", help="score a hypothesis RTTM against a reference RTTM")
    s.add_argument("ref")
    s.add_argument("hyp")
    s.add_argument("--collar", type=float, default=0.0)
    s.add_argument("--ignore-overlap", action="store_true")

    s = sub.add_parser("plot", help="mask heatmap and speaker timeline images")
    s.add_argument("audio")
    g = s.add_mutually_exclusive_group(required=True)
    g.add_argument("--checkpoint")
    g.add_argument("--rttm")
    s.add_argument("--ref", help="reference RTTM drawn above the prediction")
    return p


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(asctime)s %(name)s %(levelname)s %(message)s")
    overrides = {"seed": args.seed}
    if args.command == "synth-data":
        overrides["num_scenes"] = args.num_scenes
    if args.command == "train":
        overrides.update(steps=args.steps, lr=args.lr)
    config = load_config(args.config, profile=args.profile, **overrides)
    out = Path(args.out or "out")
    try:
        if args.command == "synth-data":
            print(cmd_synth_data(config, out, args.force))
        elif args.command == "pretrain-encoder":
            print(cmd_pretrain_encoder(config, out))
        elif args.command == "train":
            result = cmd_train(config, args.data, args.encoder, out, args.resume)
            print(json.dumps(result.history[-1]) if result.history else "{}")
        elif args.command == "infer":
            path = cmd_infer(args.audio, args.checkpoint, out, config if args.config else None)
            print(path)
        elif args.command == "eval":
            reports = cmd_eval(args.ref, args.hyp, args.collar, args.ignore_overlap)
            print(format_table(reports), file=sys.stderr)
            lines = "".join(r.to_json() + "\n" for r in reports)
            sys.stdout.write(lines)
            if args.out is not None:
                _echo_config(config, out)
                (out / "der.jsonl").write_text(lines)
        elif args.command == "plot":
            for path in cmd_plot(args.audio, out, args.checkpoint, args.rttm, args.ref):
                print(path)
    except (DiformerError, FileNotFoundError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
