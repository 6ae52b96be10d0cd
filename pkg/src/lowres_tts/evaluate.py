"""Objective evaluation proxies: mel-cepstral distortion, alignment
diagnostics and batch synthesis reports."""

from __future__ import annotations

import csv
import json
import math
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from scipy.fftpack import dct


class EvalError(ValueError):
    pass


def mcd(ref_mel: np.ndarray, hyp_mel: np.ndarray, n_coeffs: int = 13) -> float:
    """Mel-cepstral distortion in dB over time-aligned frames.

    Cepstra are the DCT-II of each log-mel frame; coefficient 0 (overall
    energy) is excluded and coefficients 1..n_coeffs compared.
    """
    ref = np.asarray(ref_mel, dtype=np.float64)
    hyp = np.asarray(hyp_mel, dtype=np.float64)
    if ref.shape != hyp.shape:
        raise EvalError(f"frame-count mismatch: {ref.shape} vs {hyp.shape}")
    ref_c = dct(ref, type=2, norm="ortho", axis=1)[:, 1:n_coeffs + 1]
    hyp_c = dct(hyp, type=2, norm="ortho", axis=1)[:, 1:n_coeffs + 1]
    dist = np.sqrt(np.sum((ref_c - hyp_c) ** 2, axis=1))
    return float((10.0 / math.log(10.0)) * math.sqrt(2.0) * np.mean(dist))


def alignment_diagnostics(alignments: np.ndarray):
    """(monotonicity, coverage) of a decoder_steps x encoder_steps matrix.

    Monotonicity: fraction of steps whose argmax does not move backwards by
    more than one position. Coverage: fraction of encoder positions whose
    column max exceeds 0.1 (strictly).
    """
    a = np.asarray(alignments, dtype=np.float64)
    if a.ndim != 2 or a.shape[0] == 0:
        raise EvalError("alignment matrix must be 2-D and non-empty")
    argmaxes = np.argmax(a, axis=1)
    if len(argmaxes) == 1:
        monotonicity = 1.0
    else:
        ok = np.sum(argmaxes[1:] >= argmaxes[:-1] - 1)
        monotonicity = float(ok) / (len(argmaxes) - 1)
    coverage = float(np.mean(np.max(a, axis=0) > 0.1))
    return monotonicity, coverage


@dataclass
class EvalRow:
    utt_id: str
    mcd_db: float | None
    monotonicity: float | None
    coverage: float | None
    stopped_naturally: bool | None
    status: str  # "ok" or the failure reason


@dataclass
class EvalReport:
    rows: list = field(default_factory=list)

    @property
    def ok_rows(self):
        return [r for r in self.rows if r.status == "ok"]

    def aggregate(self) -> dict:
        ok = self.ok_rows
        agg = {"n_utterances": len(self.rows), "n_ok": len(ok),
               "n_failed": len(self.rows) - len(ok)}
        if ok:
            mcds = [r.mcd_db for r in ok if r.mcd_db is not None]
            agg["mean_mcd_db"] = float(np.mean(mcds)) if mcds else None
            agg["mean_monotonicity"] = float(np.mean(
                [r.monotonicity for r in ok]))
            agg["mean_coverage"] = float(np.mean([r.coverage for r in ok]))
            agg["n_stopped_naturally"] = sum(
                1 for r in ok if r.stopped_naturally)
        return agg

    def write(self, out_dir):
        out_dir = Path(out_dir)
        with open(out_dir / "report.csv", "w", newline="") as f:
            w = csv.writer(f)
            w.writerow(["utt_id", "mcd_db", "monotonicity", "coverage",
                        "stopped", "status"])
            for r in self.rows:
                w.writerow([r.utt_id,
                            "" if r.mcd_db is None else f"{r.mcd_db:.4f}",
                            "" if r.monotonicity is None else f"{r.monotonicity:.4f}",
                            "" if r.coverage is None else f"{r.coverage:.4f}",
                            "" if r.stopped_naturally is None
                            else int(r.stopped_naturally),
                            r.status])
        with open(out_dir / "report.json", "w") as f:
            json.dump(self.aggregate(), f, indent=2)


def write_alignment_csv(path, alignments: np.ndarray) -> None:
    np.savetxt(path, np.asarray(alignments), delimiter=",", fmt="%.6f")


def synth_report(utterances, am_model, vocab, audio_cfg, out_dir,
                 vocoder_model=None, insert_pauses: bool = False,
                 lang_override: str | None = None, seed: int = 0,
                 compute_mcd: bool = True) -> EvalReport:
    """Synthesize every utterance and write WAVs, alignment CSVs and the
    aggregate report. Per-utterance failures are recorded, never fatal.

    Waveforms come from the WaveNet vocoder when given, else Griffin-Lim.
    MCD is computed against the ground-truth mel via teacher forcing when the
    source wav is available.
    """
    from . import acoustic, audio, frontend, wavenet

    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    report = EvalReport()
    rng = np.random.default_rng(seed)
    for utt in utterances:
        try:
            lang = lang_override or utt.lang
            seq = frontend.encode_transcript(utt.syllables, lang, vocab,
                                             insert_pauses=insert_pauses)
            mel, aligns, stopped = acoustic.synthesize_mel(am_model, seq.ids)
            mono, cov = alignment_diagnostics(aligns)
            write_alignment_csv(out_dir / f"{utt.id}_align.csv", aligns)

            mcd_db = None
            if compute_mcd and utt.wav_path and Path(utt.wav_path).exists():
                samples = audio.load_wav(utt.wav_path)
                gt_mel = audio.mel_spectrogram(samples, audio_cfg)
                pred = acoustic.teacher_forced_predict(am_model, seq.ids,
                                                       gt_mel.frames)
                mcd_db = mcd(gt_mel.frames, pred)

            if vocoder_model is not None:
                cond = wavenet.upsample_conditioning(mel,
                                                     audio_cfg.hop_length)
                wav = wavenet.generate_incremental(
                    vocoder_model, cond,
                    rng=np.random.default_rng(rng.integers(2 ** 31)))
            else:
                wav = audio.griffin_lim(
                    audio.MelSpectrogram(mel, audio_cfg.hop_s), audio_cfg)
            peak = np.max(np.abs(wav)) if len(wav) else 0.0
            if peak > 1.0:
                wav = wav / peak
            audio.save_wav(out_dir / f"{utt.id}.wav", wav,
                           audio_cfg.sample_rate)
            report.rows.append(EvalRow(utt.id, mcd_db, mono, cov, stopped,
                                       "ok"))
        except Exception as e:  # isolation: one bad utterance never aborts
            report.rows.append(EvalRow(utt.id, None, None, None, None,
                                       f"failed: {e}"))
    report.write(out_dir)
    return report
