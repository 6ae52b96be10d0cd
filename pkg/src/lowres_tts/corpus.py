"""Corpus re-segmentation: silence detection, length-capped splitting,
token-rate filtering and length histograms.

Manifests are JSON-lines, one object per utterance with keys
``id, wav, lang, syllables, dur`` (syllables as a space-separated string).
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

LANGS = ("mand", "shdia")


class CorpusError(ValueError):
    pass


@dataclass
class Utterance:
    id: str
    wav_path: str
    lang: str
    syllables: list
    duration_s: float
    # source span within the original recording, set by segmentation
    start_s: float | None = None
    end_s: float | None = None
    approx_transcript: bool = False

    def __post_init__(self):
        if self.lang not in LANGS:
            raise CorpusError(f"unknown language {self.lang!r} for {self.id}")

    @property
    def token_count(self) -> int:
        # letters plus tone digits; each transcript character is one token
        return sum(len(s) for s in self.syllables)


@dataclass
class SilenceInterval:
    start_s: float
    end_s: float

    def __post_init__(self):
        if not (0 <= self.start_s < self.end_s):
            raise CorpusError(
                f"invalid silence interval [{self.start_s}, {self.end_s}]")

    @property
    def duration_s(self) -> float:
        return self.end_s - self.start_s

    @property
    def mid_s(self) -> float:
        return 0.5 * (self.start_s + self.end_s)


@dataclass
class LengthHistogram:
    bin_width_s: float
    counts: list
    total: int

    def __post_init__(self):
        if sum(self.counts) != self.total:
            raise CorpusError("histogram counts do not sum to total")


# ---------------------------------------------------------------------------
# Manifest I/O

def read_manifest(path) -> list:
    utts = []
    seen = set()
    with open(path) as f:
        for line in f:
            line = line.strip()
            if not line:
                continue
            obj = json.loads(line)
            if obj["id"] in seen:
                raise CorpusError(f"duplicate utterance id {obj['id']!r}")
            seen.add(obj["id"])
            utts.append(Utterance(
                id=obj["id"], wav_path=obj["wav"], lang=obj["lang"],
                syllables=obj["syllables"].split() if obj["syllables"] else [],
                duration_s=float(obj["dur"]),
                approx_transcript=bool(obj.get("approx", False)),
            ))
    return utts


def write_manifest(path, utts) -> None:
    with open(path, "w") as f:
        for u in utts:
            obj = {"id": u.id, "wav": u.wav_path, "lang": u.lang,
                   "syllables": " ".join(u.syllables), "dur": round(u.duration_s, 6)}
            if u.approx_transcript:
                obj["approx"] = True
            f.write(json.dumps(obj) + "\n")


# ---------------------------------------------------------------------------
# Silence detection

def frame_rms_db(samples: np.ndarray, frame_len: int) -> np.ndarray:
    """dBFS RMS of consecutive non-overlapping frames."""
    n = len(samples) // frame_len
    frames = samples[:n * frame_len].reshape(n, frame_len)
    rms = np.sqrt(np.mean(frames.astype(np.float64) ** 2, axis=1))
    return 20.0 * np.log10(rms + 1e-10)


def detect_silence(samples: np.ndarray, frame_ms: float = 25.0,
                   threshold_db: float = -40.0, min_silence_ms: float = 300.0,
                   sample_rate: int = 16000) -> list:
    """Find intervals of at least min_silence_ms whose frames are all below
    threshold_db RMS."""
    samples = np.asarray(samples)
    if len(samples) == 0:
        raise CorpusError("empty audio")
    if frame_ms <= 0:
        raise CorpusError("frame_ms must be positive")
    if min_silence_ms < frame_ms:
        raise CorpusError("min_silence_ms must be >= frame_ms")

    frame_len = max(1, int(round(frame_ms / 1000.0 * sample_rate)))
    frame_s = frame_len / sample_rate
    duration_s = len(samples) / sample_rate
    energies = frame_rms_db(samples, frame_len)
    silent = energies < threshold_db

    intervals = []
    run_start = None
    for i, is_sil in enumerate(list(silent) + [False]):
        if is_sil and run_start is None:
            run_start = i
        elif not is_sil and run_start is not None:
            start = run_start * frame_s
            end = i * frame_s
            # a quiet partial tail extends the final run to the end of audio
            if i == len(silent):
                tail = samples[i * frame_len:]
                if len(tail) == 0 or np.sqrt(np.mean(tail.astype(np.float64) ** 2)) \
                        < 10 ** (threshold_db / 20.0):
                    end = duration_s
            if (end - start) * 1000.0 >= min_silence_ms - 1e-9:
                intervals.append(SilenceInterval(start, min(end, duration_s)))
            run_start = None
    return intervals


# ---------------------------------------------------------------------------
# Segmentation

def _forced_cut_points(start_s: float, end_s: float, max_len_s: float,
                       samples, sample_rate: int,
                       frame_ms: float = 25.0) -> list:
    """Recursively split an unbreakable span at minimum-energy frames nearest
    its midpoint until all pieces fit under max_len_s."""
    span = end_s - start_s
    if span <= max_len_s:
        return []
    mid = 0.5 * (start_s + end_s)
    # keep both halves splittable: cut must land in [end - max, start + max]
    lo = max(start_s + 1e-3, end_s - max_len_s * max(1, math.ceil(span / max_len_s) - 1))
    hi = min(end_s - 1e-3, start_s + max_len_s)
    if samples is not None:
        frame_len = max(1, int(round(frame_ms / 1000.0 * sample_rate)))
        i0 = int(math.ceil(lo * sample_rate / frame_len))
        i1 = int(math.floor(hi * sample_rate / frame_len))
        candidates = []
        for i in range(i0, i1 + 1):
            seg = np.asarray(samples[i * frame_len - frame_len // 2:
                                     i * frame_len + frame_len // 2], dtype=np.float64)
            if len(seg) == 0:
                continue
            energy = float(np.sqrt(np.mean(seg ** 2)))
            candidates.append((i * frame_len / sample_rate, energy))
        if candidates:
            min_e = min(e for _, e in candidates)
            cut = min((t for t, e in candidates if e <= min_e + 1e-9),
                      key=lambda t: abs(t - mid))
        else:
            cut = min(max(mid, lo), hi)
    else:
        cut = min(max(mid, lo), hi)
    return (_forced_cut_points(start_s, cut, max_len_s, samples, sample_rate)
            + [cut]
            + _forced_cut_points(cut, end_s, max_len_s, samples, sample_rate))


def _speech_duration(start_s, end_s, silences) -> float:
    overlap = sum(max(0.0, min(end_s, s.end_s) - max(start_s, s.start_s))
                  for s in silences)
    return max(0.0, (end_s - start_s) - overlap)


def segment_utterance(utt: Utterance, silences, max_len_s: float = 7.0,
                      samples=None, sample_rate: int = 16000) -> list:
    """Split an utterance into segments of at most max_len_s seconds.

    Cuts land at silence midpoints; a speech run longer than max_len_s with no
    internal silence is force-cut at the minimum-energy frame nearest its
    midpoint (with a warning). Segments tile [0, duration] so no audio is
    dropped. Transcripts are apportioned by speech duration and flagged
    approximate whenever a split occurs.
    """
    if max_len_s <= 0:
        raise CorpusError("max_len_s must be positive")
    dur = utt.duration_s
    for s in silences:
        if s.end_s > dur + 1e-6:
            raise CorpusError(f"silence interval beyond utterance end in {utt.id}")

    cuts = [0.0] + [s.mid_s for s in silences if 0.0 < s.mid_s < dur] + [dur]
    cuts = sorted(set(cuts))

    # force-cut atomic spans that exceed the cap on their own
    atomic = []
    for a, b in zip(cuts[:-1], cuts[1:]):
        if b - a > max_len_s:
            warnings.warn(
                f"{utt.id}: speech run of {b - a:.2f}s exceeds {max_len_s}s "
                "with no usable silence; forcing cut at minimum-energy frame")
            atomic.extend([a] + _forced_cut_points(a, b, max_len_s, samples,
                                                   sample_rate))
        else:
            atomic.append(a)
    atomic.append(dur)

    # greedy packing of consecutive atomic spans
    bounds = []
    seg_start = atomic[0]
    for nxt in atomic[1:]:
        if nxt - seg_start > max_len_s + 1e-9:
            bounds.append((seg_start, prev))
            seg_start = prev
        prev = nxt
    bounds.append((seg_start, atomic[-1]))

    if len(bounds) == 1:
        return [utt]

    # apportion syllables by cumulative speech duration, rounded to syllable
    # boundaries
    speech = [_speech_duration(a, b, silences) for a, b in bounds]
    total_speech = sum(speech) or 1.0
    n_syll = len(utt.syllables)
    cum = 0.0
    idx = [0]
    for sp in speech:
        cum += sp
        idx.append(int(round(n_syll * cum / total_speech)))
    idx[-1] = n_syll

    out = []
    for k, (a, b) in enumerate(bounds):
        out.append(Utterance(
            id=f"{utt.id}_seg{k}", wav_path=utt.wav_path, lang=utt.lang,
            syllables=utt.syllables[idx[k]:idx[k + 1]],
            duration_s=b - a, start_s=a, end_s=b,
            approx_transcript=n_syll > 0,
        ))
    return out


# ---------------------------------------------------------------------------
# Rate filter and histogram

def filter_by_rate(manifest, min_rate: float = 2.0, max_rate: float = 12.0):
    """Partition utterances by letter-token rate (tokens per second)."""
    kept, dropped = [], []
    for u in manifest:
        if u.duration_s <= 0:
            raise CorpusError(f"utterance {u.id!r} has non-positive duration")
        rate = u.token_count / u.duration_s
        (kept if min_rate <= rate <= max_rate else dropped).append(u)
    return kept, dropped


def length_histogram(manifest, bin_width_s: float = 1.0) -> LengthHistogram:
    if bin_width_s <= 0:
        raise CorpusError("bin_width_s must be positive")
    if not manifest:
        return LengthHistogram(bin_width_s=bin_width_s, counts=[], total=0)
    bins = [int(u.duration_s // bin_width_s) for u in manifest]
    counts = [0] * (max(bins) + 1)
    for b in bins:
        counts[b] += 1
    return LengthHistogram(bin_width_s=bin_width_s, counts=counts,
                           total=len(manifest))


def write_histogram_csv(path, hist: LengthHistogram) -> None:
    with open(path, "w") as f:
        f.write("bin_start_s,count\n")
        for k, c in enumerate(hist.counts):
            f.write(f"{k * hist.bin_width_s},{c}\n")
