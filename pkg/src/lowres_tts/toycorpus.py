"""Synthetic toy corpus: each letter token is a 100 ms tone burst at a
token-specific frequency; the two languages share one frequency bank but
assign it to tokens in opposite orders.

This stands in for real corpora at desk scale: learnability is trivial to
verify because the mel argmax of every burst must sit at the bin nearest the
token's assigned frequency.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from .audio import AudioConfig, save_wav
from .corpus import Utterance, write_manifest

INITIALS = "bdglmn"
FINALS = "aeiou"
TONES = "12345"

TOKEN_MS = 100.0
EDGE_PAD_MS = 25.0
AMPLITUDE = 0.25

# both "languages" share one frequency bank but assign it to tokens in
# opposite orders, modelling two languages that share acoustic space while
# disagreeing on letter-to-sound rules: every token is pronounced differently
# across languages even though the sounds themselves are common
_BANK_BASE = 300.0
_BANK_STEP = 100.0


def symbol_inventory():
    """All symbols a toy syllable can produce, in deterministic order."""
    return sorted(set(INITIALS) | set(FINALS)) + [f"<t{t}>" for t in TONES]


def token_frequencies(lang: str) -> dict:
    symbols = symbol_inventory()
    if lang == "mand":
        order = range(len(symbols))
    elif lang == "shdia":
        order = range(len(symbols) - 1, -1, -1)
    else:
        raise KeyError(lang)
    return {sym: _BANK_BASE + i * _BANK_STEP
            for sym, i in zip(symbols, order)}


def _tone_burst(freq: float, n: int, sample_rate: int) -> np.ndarray:
    t = np.arange(n) / sample_rate
    burst = AMPLITUDE * np.sin(2.0 * np.pi * freq * t)
    ramp = int(0.005 * sample_rate)
    env = np.ones(n)
    env[:ramp] = 0.5 - 0.5 * np.cos(np.pi * np.arange(ramp) / ramp)
    env[-ramp:] = env[:ramp][::-1]
    return burst * env


def random_syllable(rng: np.random.Generator) -> str:
    return (INITIALS[rng.integers(len(INITIALS))]
            + FINALS[rng.integers(len(FINALS))]
            + TONES[rng.integers(len(TONES))])


def render_syllables(syllables, lang: str, rng: np.random.Generator,
                     sample_rate: int = 16000,
                     phrase_len_range=None,
                     phrase_silence_range=(0.4, 0.6)) -> np.ndarray:
    """Waveform for a syllable sequence: one tone burst per letter token.

    With phrase_len_range set, silences of phrase_silence_range seconds are
    inserted every that-many syllables (long-form mode for segmentation
    tests).
    """
    from .frontend import syllable_to_letters

    freqs = token_frequencies(lang)
    tok_n = int(TOKEN_MS / 1000.0 * sample_rate)
    pad_n = int(EDGE_PAD_MS / 1000.0 * sample_rate)
    pieces = [np.zeros(pad_n)]
    next_break = (rng.integers(*phrase_len_range)
                  if phrase_len_range else None)
    for k, syl in enumerate(syllables):
        if next_break is not None and k == next_break:
            gap = rng.uniform(*phrase_silence_range)
            pieces.append(np.zeros(int(gap * sample_rate)))
            next_break = k + int(rng.integers(*phrase_len_range))
        for sym in syllable_to_letters(syl):
            pieces.append(_tone_burst(freqs[sym], tok_n, sample_rate))
    pieces.append(np.zeros(pad_n))
    return np.concatenate(pieces)


def gen_toycorpus(out_dir, n_utts: int, lang_mix="mand", seed: int = 0,
                  n_syllables=(2, 4), long_form: bool = False,
                  audio_cfg: AudioConfig | None = None):
    """Generate wavs plus a JSON-lines manifest under out_dir.

    lang_mix is a language name or a {lang: weight} dict. long_form produces
    many-syllable utterances with internal pauses, for segmentation tests.
    Fully reproducible per seed.
    """
    if n_utts < 1:
        raise ValueError("n_utts must be >= 1")
    audio_cfg = audio_cfg or AudioConfig()
    if isinstance(lang_mix, str):
        lang_mix = {lang_mix: 1.0}
    langs = sorted(lang_mix)
    weights = np.array([lang_mix[l] for l in langs], dtype=np.float64)
    weights /= weights.sum()

    out_dir = Path(out_dir)
    wav_dir = out_dir / "wav"
    wav_dir.mkdir(parents=True, exist_ok=True)
    rng = np.random.default_rng(seed)

    utts = []
    for i in range(n_utts):
        lang = langs[rng.choice(len(langs), p=weights)]
        count = int(rng.integers(n_syllables[0], n_syllables[1] + 1))
        syllables = [random_syllable(rng) for _ in range(count)]
        samples = render_syllables(
            syllables, lang, rng, audio_cfg.sample_rate,
            phrase_len_range=(3, 7) if long_form else None)
        utt_id = f"toy_{lang}_{i:04d}"
        wav_path = wav_dir / f"{utt_id}.wav"
        save_wav(wav_path, samples, audio_cfg.sample_rate)
        utts.append(Utterance(
            id=utt_id, wav_path=str(wav_path), lang=lang,
            syllables=syllables,
            duration_s=len(samples) / audio_cfg.sample_rate))
    write_manifest(out_dir / "manifest.jsonl", utts)
    return utts
