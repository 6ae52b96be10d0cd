"""Operator-facing command line for the TTS pipeline.

Exit codes: 0 success, 1 user error (bad arguments, bad inputs), 2 internal
error. All randomness is controlled by --seed; outputs land under --workdir
(default $LOWRES_TTS_WORKDIR, else the current directory).
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import traceback
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

import numpy as np

from . import (acoustic, audio, checkpoint, corpus, evaluate, frontend,
               toycorpus, transfer, wavenet)

USER_ERRORS = (corpus.CorpusError, frontend.FrontendError, audio.AudioError,
               checkpoint.CheckpointError, transfer.TransferError,
               evaluate.EvalError, FileNotFoundError, ValueError)


class _Parser(argparse.ArgumentParser):
    # unknown flags/subcommands are user errors -> exit 1, not argparse's 2
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"error: {message}", file=sys.stderr)
        raise SystemExit(1)


def _pmap(fn, items, jobs: int):
    if jobs <= 1:
        return [fn(x) for x in items]
    with ThreadPoolExecutor(max_workers=jobs) as pool:
        return list(pool.map(fn, items))


def _load_pipeline_config(path):
    if not path:
        return {}
    with open(path) as f:
        return json.load(f)


def _audio_cfg(cfg: dict) -> audio.AudioConfig:
    return audio.AudioConfig(**cfg.get("audio", {}))


def _workdir(args) -> Path:
    wd = Path(args.workdir)
    wd.mkdir(parents=True, exist_ok=True)
    return wd


def _read_manifests(paths):
    return transfer.merge_corpora([corpus.read_manifest(p) for p in paths])


# ---------------------------------------------------------------------------
# Subcommands

def cmd_gen_toycorpus(args, cfg):
    mix = {}
    for part in args.langs.split(","):
        if "=" in part:
            lang, w = part.split("=")
            mix[lang] = float(w)
        else:
            mix[part] = 1.0
    out = Path(args.out or (_workdir(args) / "toycorpus"))
    toycorpus.gen_toycorpus(
        out, args.n_utts, mix, seed=args.seed,
        n_syllables=(args.min_syllables, args.max_syllables),
        long_form=args.long_form, audio_cfg=_audio_cfg(cfg))
    print(f"wrote {args.n_utts} utterances under {out}")
    return 0


def cmd_prep(args, cfg):
    acfg = _audio_cfg(cfg)
    utts = _read_manifests(args.manifest)
    out_dir = Path(args.out_dir or (_workdir(args) / "prep"))
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)

    def process(utt):
        samples = audio.load_wav(utt.wav_path, acfg.sample_rate)
        silences = corpus.detect_silence(samples, sample_rate=acfg.sample_rate)
        segments = corpus.segment_utterance(utt, silences, args.max_len,
                                            samples, acfg.sample_rate)
        out = []
        for seg in segments:
            if seg.start_s is None:
                out.append(seg)
                continue
            lo = int(seg.start_s * acfg.sample_rate)
            hi = int(seg.end_s * acfg.sample_rate)
            path = wav_dir / f"{seg.id}.wav"
            audio.save_wav(path, samples[lo:hi], acfg.sample_rate)
            seg.wav_path = str(path)
            out.append(seg)
        return out

    before = corpus.length_histogram(utts, args.bin_width)
    segmented = [seg for group in _pmap(process, utts, args.jobs)
                 for seg in group]
    kept, dropped = corpus.filter_by_rate(segmented, args.min_rate,
                                          args.max_rate)
    corpus.write_manifest(out_dir / "manifest.jsonl", kept)
    corpus.write_manifest(out_dir / "dropped.jsonl", dropped)
    corpus.write_histogram_csv(out_dir / "histogram_before.csv", before)
    corpus.write_histogram_csv(out_dir / "histogram_after.csv",
                               corpus.length_histogram(kept, args.bin_width))
    print(f"{len(utts)} utterances -> {len(segmented)} segments, "
          f"kept {len(kept)}, dropped {len(dropped)}")
    return 0


def cmd_vocab(args, cfg):
    utts = _read_manifests(args.manifest)
    vocab = frontend.build_vocab(utts)
    out = Path(args.out or (_workdir(args) / "vocab.txt"))
    vocab.save(out)
    print(f"vocabulary of {vocab.size} tokens -> {out}")
    return 0


def cmd_features(args, cfg):
    acfg = _audio_cfg(cfg)
    utts = _read_manifests(args.manifest)
    out_dir = Path(args.out_dir or (_workdir(args) / "mels"))
    out_dir.mkdir(parents=True, exist_ok=True)

    def extract(utt):
        mel = audio.mel_spectrogram(audio.load_wav(utt.wav_path,
                                                   acfg.sample_rate), acfg)
        audio.save_mel(out_dir / f"{utt.id}.mel", mel)

    _pmap(extract, utts, args.jobs)
    print(f"extracted {len(utts)} mel files -> {out_dir}")
    return 0


def _make_plan(args, stage):
    if args.plan:
        return transfer.TrainPlan.from_json(args.plan)
    return transfer.TrainPlan(
        stage=stage, corpora=list(args.manifest), steps=args.steps,
        learning_rate=args.lr, seed=args.seed,
        init_from=getattr(args, "init", None), batch_size=args.batch_size)


def cmd_train_am(args, cfg):
    plan = _make_plan(args, "average")
    vocab = frontend.Vocabulary.load(args.vocab) if args.vocab else None
    ckpt = transfer.train_average_acoustic(
        plan, audio_cfg=_audio_cfg(cfg),
        am_cfg=cfg.get("am"),
        insert_pauses=args.insert_pauses, vocab=vocab,
        lang_override="mand" if args.shared_phoneset else None)
    out = Path(args.out or (_workdir(args) / "am_average.ckpt"))
    transfer.save(ckpt, out)
    print(f"acoustic checkpoint -> {out} "
          f"(final loss {ckpt.training_meta['final_loss']:.4f})")
    return 0


def cmd_finetune_am(args, cfg):
    plan = _make_plan(args, "finetune")
    ckpt = transfer.finetune_acoustic(
        plan, lang_override="mand" if args.shared_phoneset else None)
    out = Path(args.out or (_workdir(args) / "am_finetuned.ckpt"))
    transfer.save(ckpt, out)
    print(f"acoustic checkpoint -> {out} "
          f"(final loss {ckpt.training_meta['final_loss']:.4f})")
    return 0


def cmd_synth_mel(args, cfg):
    ckpt = checkpoint.load_checkpoint(args.am_checkpoint,
                                      expect_kind="acoustic")
    model, vocab, acfg = transfer.acoustic_model_from_checkpoint(ckpt)
    out_dir = Path(args.out_dir or (_workdir(args) / "synth"))
    out_dir.mkdir(parents=True, exist_ok=True)
    if args.text:
        utt_list = [("cli_text", args.text.split(), args.lang)]
    else:
        utt_list = [(u.id, u.syllables, u.lang)
                    for u in _read_manifests(args.manifest)]
    for utt_id, syllables, lang in utt_list:
        seq = frontend.encode_transcript(
            syllables, "mand" if args.shared_phoneset else lang, vocab,
            insert_pauses=ckpt.config.get("insert_pauses", False))
        mel, aligns, stopped = acoustic.synthesize_mel(model, seq.ids)
        audio.save_mel(out_dir / f"{utt_id}.mel",
                       audio.MelSpectrogram(mel, acfg.hop_s))
        evaluate.write_alignment_csv(out_dir / f"{utt_id}_align.csv", aligns)
        print(f"{utt_id}: {mel.shape[0]} frames, "
              f"stopped_naturally={stopped}")
    return 0


def cmd_train_voc(args, cfg):
    plan = _make_plan(args, "average")
    ckpt = transfer.train_average_vocoder(
        plan, audio_cfg=_audio_cfg(cfg),
        voc_cfg=(wavenet.VocoderConfig(**cfg["vocoder"])
                 if "vocoder" in cfg else None),
        am_checkpoint_path=args.am_checkpoint, crop_len=args.crop_len)
    out = Path(args.out or (_workdir(args) / "voc_average.ckpt"))
    transfer.save(ckpt, out)
    print(f"vocoder checkpoint -> {out} "
          f"(final NLL {ckpt.training_meta['final_loss']:.3f})")
    return 0


def cmd_finetune_voc(args, cfg):
    plan = _make_plan(args, "finetune")
    ckpt = transfer.finetune_vocoder(plan,
                                     am_checkpoint_path=args.am_checkpoint,
                                     crop_len=args.crop_len)
    out = Path(args.out or (_workdir(args) / "voc_finetuned.ckpt"))
    transfer.save(ckpt, out)
    print(f"vocoder checkpoint -> {out} "
          f"(final NLL {ckpt.training_meta['final_loss']:.3f})")
    return 0


def cmd_tts(args, cfg):
    am_ckpt = checkpoint.load_checkpoint(args.am_checkpoint,
                                         expect_kind="acoustic")
    model, vocab, acfg = transfer.acoustic_model_from_checkpoint(am_ckpt)
    seq = frontend.encode_transcript(
        args.text.split(), args.lang, vocab,
        insert_pauses=am_ckpt.config.get("insert_pauses", False))
    mel, aligns, stopped = acoustic.synthesize_mel(model, seq.ids)
    if args.vocoder == "wavenet":
        if not args.voc_checkpoint:
            raise transfer.TransferError(
                "--vocoder wavenet requires --voc-checkpoint")
        voc_ckpt = checkpoint.load_checkpoint(args.voc_checkpoint,
                                              expect_kind="vocoder")
        voc_model, _ = transfer.vocoder_model_from_checkpoint(voc_ckpt)
        cond = wavenet.upsample_conditioning(mel, acfg.hop_length)
        wav = wavenet.generate_incremental(
            voc_model, cond, rng=np.random.default_rng(args.seed))
    else:
        wav = audio.griffin_lim(audio.MelSpectrogram(mel, acfg.hop_s), acfg)
    peak = np.max(np.abs(wav)) if len(wav) else 0.0
    if peak > 1.0:
        wav = wav / peak
    out = Path(args.out or (_workdir(args) / "tts.wav"))
    audio.save_wav(out, wav, acfg.sample_rate)
    print(f"{out}: {len(wav)} samples, stopped_naturally={stopped}")
    return 0


def cmd_report(args, cfg):
    am_ckpt = checkpoint.load_checkpoint(args.am_checkpoint,
                                         expect_kind="acoustic")
    model, vocab, acfg = transfer.acoustic_model_from_checkpoint(am_ckpt)
    voc_model = None
    if args.voc_checkpoint:
        voc_ckpt = checkpoint.load_checkpoint(args.voc_checkpoint,
                                              expect_kind="vocoder")
        voc_model, _ = transfer.vocoder_model_from_checkpoint(voc_ckpt)
    utts = _read_manifests(args.manifest)
    out_dir = Path(args.out_dir or (_workdir(args) / "report"))
    report = evaluate.synth_report(
        utts, model, vocab, acfg, out_dir, vocoder_model=voc_model,
        insert_pauses=am_ckpt.config.get("insert_pauses", False),
        lang_override="mand" if args.shared_phoneset else None,
        seed=args.seed)
    print(json.dumps(report.aggregate(), indent=2))
    return 0


# ---------------------------------------------------------------------------

def build_parser() -> _Parser:
    parser = _Parser(prog="lowres-tts",
                     description="Desk-scale low-resource TTS pipeline")
    parser.add_argument("--seed", type=int, default=0)
    parser.add_argument("--config", help="pipeline config JSON")
    parser.add_argument("--workdir",
                        default=os.environ.get("LOWRES_TTS_WORKDIR", "."))
    sub = parser.add_subparsers(dest="command", required=True,
                                parser_class=_Parser)

    p = sub.add_parser("gen-toycorpus", help="generate a synthetic corpus")
    p.add_argument("--out")
    p.add_argument("--n-utts", type=int, required=True)
    p.add_argument("--langs", default="mand",
                   help="e.g. 'mand' or 'mand=0.7,shdia=0.3'")
    p.add_argument("--min-syllables", type=int, default=2)
    p.add_argument("--max-syllables", type=int, default=4)
    p.add_argument("--long-form", action="store_true")
    p.set_defaults(func=cmd_gen_toycorpus)

    p = sub.add_parser("prep", help="segment, rate-filter and histogram")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--max-len", type=float, default=7.0)
    p.add_argument("--min-rate", type=float, default=2.0)
    p.add_argument("--max-rate", type=float, default=12.0)
    p.add_argument("--bin-width", type=float, default=1.0)
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_prep)

    p = sub.add_parser("vocab", help="build the letter vocabulary")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--out")
    p.set_defaults(func=cmd_vocab)

    p = sub.add_parser("features", help="extract log-mel features")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_features)

    def train_flags(p, init=False):
        p.add_argument("--plan", help="TrainPlan JSON (overrides flags)")
        p.add_argument("--manifest", action="append", default=[])
        p.add_argument("--steps", type=int, default=100)
        p.add_argument("--lr", type=float, default=None)
        p.add_argument("--batch-size", type=int, default=8)
        p.add_argument("--out")
        if init:
            p.add_argument("--init", required=False)

    p = sub.add_parser("train-am", help="train the average acoustic model")
    train_flags(p)
    p.add_argument("--vocab", help="vocabulary file (default: built from data)")
    p.add_argument("--insert-pauses", action="store_true")
    p.add_argument("--shared-phoneset", action="store_true",
                   help="encode every language as 'mand' (no language tags)")
    p.set_defaults(func=cmd_train_am)

    p = sub.add_parser("finetune-am", help="fine-tune the acoustic model")
    train_flags(p, init=True)
    p.add_argument("--shared-phoneset", action="store_true")
    p.set_defaults(func=cmd_finetune_am)

    p = sub.add_parser("synth-mel", help="synthesize mel features")
    p.add_argument("--am-checkpoint", required=True)
    p.add_argument("--text", help="space-separated syllables")
    p.add_argument("--lang", default="mand")
    p.add_argument("--manifest", action="append", default=[])
    p.add_argument("--shared-phoneset", action="store_true")
    p.add_argument("--out-dir")
    p.set_defaults(func=cmd_synth_mel)

    p = sub.add_parser("train-voc", help="train the average vocoder")
    train_flags(p)
    p.add_argument("--am-checkpoint",
                   help="condition on this model's predicted mels")
    p.add_argument("--crop-len", type=int, default=4000)
    p.set_defaults(func=cmd_train_voc)

    p = sub.add_parser("finetune-voc", help="fine-tune the vocoder")
    train_flags(p, init=True)
    p.add_argument("--am-checkpoint")
    p.add_argument("--crop-len", type=int, default=4000)
    p.set_defaults(func=cmd_finetune_voc)

    p = sub.add_parser("tts", help="text to waveform")
    p.add_argument("--text", required=True)
    p.add_argument("--lang", default="mand")
    p.add_argument("--am-checkpoint", required=True)
    p.add_argument("--vocoder", choices=("wavenet", "griffinlim"),
                   default="griffinlim")
    p.add_argument("--voc-checkpoint")
    p.add_argument("--out")
    p.set_defaults(func=cmd_tts)

    p = sub.add_parser("report", help="objective synthesis report")
    p.add_argument("--manifest", action="append", required=True)
    p.add_argument("--am-checkpoint", required=True)
    p.add_argument("--voc-checkpoint")
    p.add_argument("--shared-phoneset", action="store_true")
    p.add_argument("--out-dir")
    p.add_argument("--jobs", type=int, default=1)
    p.set_defaults(func=cmd_report)

    return parser


def run_command(argv) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as e:
        return int(e.code or 0)
    try:
        import torch

        torch.manual_seed(args.seed)
        np.random.seed(args.seed)
        cfg = _load_pipeline_config(args.config)
        return args.func(args, cfg)
    except USER_ERRORS as e:
        print(f"error: {e}", file=sys.stderr)
        return 1
    except Exception:
        traceback.print_exc()
        return 2


def main() -> None:
    sys.exit(run_command(sys.argv[1:]))
