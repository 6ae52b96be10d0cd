"""Average-model pretraining and low-resource fine-tuning.

Pool corpora (no speaker identifiers anywhere), train acoustic model and
vocoder on the pooled data, then fine-tune each on the small target corpus
starting from the average checkpoint. The vocabulary is built over the union
of all languages up front, so fine-tuning on language-tagged target tokens
needs no architecture change; their embedding rows simply start untrained.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field

import numpy as np
import torch

from . import acoustic, audio, checkpoint, frontend, wavenet
from .corpus import Utterance, read_manifest


class TransferError(ValueError):
    pass


@dataclass
class TrainPlan:
    stage: str  # "average" or "finetune"
    corpora: list
    steps: int
    learning_rate: float | None = None
    seed: int = 0
    init_from: str | None = None
    batch_size: int = 8

    def __post_init__(self):
        if self.stage not in ("average", "finetune"):
            raise TransferError(f"unknown stage {self.stage!r}")
        if self.stage == "finetune" and not self.init_from:
            raise TransferError("finetune requires init_from")
        if not self.corpora:
            raise TransferError("at least one corpus is required")
        if self.learning_rate is None:
            self.learning_rate = 1e-3 if self.stage == "average" else 1e-4

    @classmethod
    def from_json(cls, path) -> "TrainPlan":
        with open(path) as f:
            return cls(**json.load(f))


def merge_corpora(manifests) -> list:
    """Concatenate utterance lists; duplicate ids across manifests are fatal."""
    seen = {}
    merged = []
    for mi, manifest in enumerate(manifests):
        for u in manifest:
            if u.id in seen:
                raise TransferError(
                    f"duplicate utterance id {u.id!r} (manifests "
                    f"{seen[u.id]} and {mi})")
            seen[u.id] = mi
            merged.append(u)
    return merged


def load_plan_corpora(plan: TrainPlan) -> list:
    return merge_corpora([read_manifest(p) for p in plan.corpora])


# ---------------------------------------------------------------------------
# Dataset assembly

def build_am_items(utterances, vocab, audio_cfg, insert_pauses=False,
                   lang_override=None):
    """(token ids, mel frames) pairs, sorted by id so manifest concatenation
    order cannot influence training."""
    items = []
    for utt in sorted(utterances, key=lambda u: u.id):
        lang = lang_override or utt.lang
        try:
            seq = frontend.encode_transcript(utt.syllables, lang, vocab,
                                             insert_pauses=insert_pauses)
        except frontend.FrontendError as e:
            raise TransferError(
                f"utterance {utt.id!r}: {e}; the checkpoint vocabulary does "
                "not cover the target corpus - rebuild the vocabulary over "
                "all languages before average training") from None
        mel = audio.mel_spectrogram(audio.load_wav(utt.wav_path), audio_cfg)
        items.append((seq.ids, mel.frames))
    return items


def collate_am_batch(items, n_mels: int):
    """Pad a list of (ids, mel) into tensors plus length vectors."""
    text_lengths = [len(ids) for ids, _ in items]
    mel_lengths = [mel.shape[0] for _, mel in items]
    max_l, max_t = max(text_lengths), max(mel_lengths)
    ids = torch.zeros(len(items), max_l, dtype=torch.long)
    mels = torch.zeros(len(items), max_t, n_mels)
    for i, (seq, mel) in enumerate(items):
        ids[i, :len(seq)] = torch.as_tensor(seq)
        mels[i, :mel.shape[0]] = torch.as_tensor(mel)
    return ids, mels, torch.as_tensor(text_lengths), torch.as_tensor(mel_lengths)


def validation_loss(model, items) -> float:
    """Teacher-forced total loss over a fixed item list (no updates)."""
    model.eval()
    with torch.no_grad():
        ids, mels, tl, ml = collate_am_batch(items, model.config.n_mels)
        mask = acoustic.make_memory_mask(tl, ids.shape[1])
        outputs = model(ids, mels, tl, mask)
        return float(acoustic.compute_losses(outputs, mels, ml)["total"])


def build_vocoder_items(utterances, audio_cfg, am_model=None, vocab=None,
                        insert_pauses=False, lang_override=None):
    """(grid-snapped audio, per-sample conditioning) pairs.

    Conditioning comes from the acoustic model's teacher-forced predictions
    when am_model is given (the production configuration); otherwise the
    ground-truth mel is used directly.
    """
    items = []
    for utt in sorted(utterances, key=lambda u: u.id):
        samples = audio.load_wav(utt.wav_path)
        mel = audio.mel_spectrogram(samples, audio_cfg)
        frames = mel.frames
        if am_model is not None:
            lang = lang_override or utt.lang
            seq = frontend.encode_transcript(utt.syllables, lang, vocab,
                                             insert_pauses=insert_pauses)
            frames = acoustic.teacher_forced_predict(am_model, seq.ids, frames)
        cond = wavenet.upsample_conditioning(frames, audio_cfg.hop_length)
        n = min(len(samples), cond.shape[0])
        snapped = wavenet.snap_to_grid(samples[:n])
        items.append((snapped, cond[:n]))
    return items


# ---------------------------------------------------------------------------
# Training loops

def run_acoustic_training(model, items, steps, learning_rate, seed,
                          batch_size=8):
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(steps):
        idx = rng.choice(len(items), size=min(batch_size, len(items)),
                         replace=False)
        batch = [items[i] for i in idx]
        ids, mels, tl, ml = collate_am_batch(batch, model.config.n_mels)
        history.append(acoustic.train_step(model, optimizer, ids, mels, tl, ml))
    return history


def run_vocoder_training(model, items, steps, learning_rate, seed,
                         crop_len=4000):
    optimizer = torch.optim.Adam(model.parameters(), lr=learning_rate)
    rng = np.random.default_rng(seed)
    history = []
    for _ in range(steps):
        samples, cond = items[rng.integers(len(items))]
        n = len(samples)
        if n > crop_len:
            start = int(rng.integers(n - crop_len + 1))
            samples = samples[start:start + crop_len]
            cond = cond[start:start + crop_len]
        history.append(wavenet.train_step_vocoder(model, optimizer, samples,
                                                  cond))
    return history


# ---------------------------------------------------------------------------
# Stage orchestration

def _acoustic_checkpoint(model, vocab, audio_cfg, plan, history,
                         insert_pauses) -> checkpoint.Checkpoint:
    return checkpoint.Checkpoint(
        model_kind="acoustic",
        config={"am": model.config.to_dict(), "audio": audio_cfg.to_dict(),
                "vocab": vocab.token_strings(), "insert_pauses": insert_pauses},
        tensors=checkpoint.tensors_from_module(model),
        training_meta={"stage": plan.stage, "steps": plan.steps,
                       "corpora": list(plan.corpora), "seed": plan.seed,
                       "final_loss": history[-1]["total"] if history else None})


def acoustic_model_from_checkpoint(ckpt: checkpoint.Checkpoint):
    cfg = acoustic.AMConfig.from_dict(ckpt.config["am"])
    model = acoustic.Tacotron2Model(cfg)
    checkpoint.load_tensors_into_module(model, ckpt.tensors)
    vocab = frontend.Vocabulary.from_token_strings(ckpt.config["vocab"])
    audio_cfg = audio.AudioConfig.from_dict(ckpt.config["audio"])
    return model, vocab, audio_cfg


def vocoder_model_from_checkpoint(ckpt: checkpoint.Checkpoint):
    cfg = wavenet.VocoderConfig.from_dict(ckpt.config["vocoder"])
    model = wavenet.WaveNetVocoder(cfg)
    checkpoint.load_tensors_into_module(model, ckpt.tensors)
    return model, audio.AudioConfig.from_dict(ckpt.config["audio"])


def train_average_acoustic(plan: TrainPlan, audio_cfg=None, am_cfg=None,
                           insert_pauses=False, vocab=None,
                           lang_override=None) -> checkpoint.Checkpoint:
    """Train the average acoustic model over the pooled corpora.

    The vocabulary defaults to the union over the pooled corpora; pass a
    wider one (built over target languages too) ahead of a planned
    fine-tune.
    """
    if plan.stage != "average":
        raise TransferError("plan stage must be 'average'")
    utts = load_plan_corpora(plan)
    audio_cfg = audio_cfg or audio.AudioConfig()
    vocab = vocab or frontend.build_vocab(utts)
    if isinstance(am_cfg, dict):
        am_cfg = acoustic.AMConfig(vocab_size=vocab.size, **am_cfg)
    if am_cfg is None:
        am_cfg = acoustic.AMConfig(vocab_size=vocab.size)
    elif am_cfg.vocab_size != vocab.size:
        raise TransferError("am_cfg.vocab_size does not match vocabulary")
    torch.manual_seed(plan.seed)
    model = acoustic.Tacotron2Model(am_cfg)
    items = build_am_items(utts, vocab, audio_cfg, insert_pauses,
                           lang_override=lang_override)
    history = run_acoustic_training(model, items, plan.steps,
                                    plan.learning_rate, plan.seed,
                                    plan.batch_size)
    return _acoustic_checkpoint(model, vocab, audio_cfg, plan, history,
                                insert_pauses)


def finetune_acoustic(plan: TrainPlan,
                      lang_override=None) -> checkpoint.Checkpoint:
    """Fine-tune all acoustic parameters on the target corpus.

    Target tokens missing from the checkpoint vocabulary are a hard error
    (the shared-vocabulary trap), with advice to rebuild the vocabulary.
    """
    if plan.stage != "finetune":
        raise TransferError("plan stage must be 'finetune'")
    ckpt = checkpoint.load_checkpoint(plan.init_from, expect_kind="acoustic")
    model, vocab, audio_cfg = acoustic_model_from_checkpoint(ckpt)
    insert_pauses = ckpt.config.get("insert_pauses", False)
    utts = load_plan_corpora(plan)
    if not utts:
        raise TransferError("target corpus is empty")
    items = build_am_items(utts, vocab, audio_cfg, insert_pauses,
                           lang_override=lang_override)
    torch.manual_seed(plan.seed)
    history = run_acoustic_training(model, items, plan.steps,
                                    plan.learning_rate, plan.seed,
                                    plan.batch_size)
    return _acoustic_checkpoint(model, vocab, audio_cfg, plan, history,
                                insert_pauses)


def train_average_vocoder(plan: TrainPlan, audio_cfg=None, voc_cfg=None,
                          am_checkpoint_path=None,
                          crop_len=4000) -> checkpoint.Checkpoint:
    """Train the average vocoder, conditioned on the acoustic model's
    teacher-forced predicted mels when a checkpoint is supplied."""
    if plan.stage != "average":
        raise TransferError("plan stage must be 'average'")
    utts = load_plan_corpora(plan)
    audio_cfg = audio_cfg or audio.AudioConfig()
    voc_cfg = voc_cfg or wavenet.VocoderConfig(hop_length=audio_cfg.hop_length)
    am_model = vocab = None
    insert_pauses = False
    if am_checkpoint_path:
        am_ckpt = checkpoint.load_checkpoint(am_checkpoint_path,
                                             expect_kind="acoustic")
        am_model, vocab, _ = acoustic_model_from_checkpoint(am_ckpt)
        insert_pauses = am_ckpt.config.get("insert_pauses", False)
    torch.manual_seed(plan.seed)
    model = wavenet.WaveNetVocoder(voc_cfg)
    items = build_vocoder_items(utts, audio_cfg, am_model, vocab,
                                insert_pauses)
    history = run_vocoder_training(model, items, plan.steps,
                                   plan.learning_rate, plan.seed, crop_len)
    return checkpoint.Checkpoint(
        model_kind="vocoder",
        config={"vocoder": voc_cfg.to_dict(), "audio": audio_cfg.to_dict()},
        tensors=checkpoint.tensors_from_module(model),
        training_meta={"stage": plan.stage, "steps": plan.steps,
                       "corpora": list(plan.corpora), "seed": plan.seed,
                       "final_loss": history[-1] if history else None})


def finetune_vocoder(plan: TrainPlan, am_checkpoint_path=None,
                     crop_len=4000) -> checkpoint.Checkpoint:
    if plan.stage != "finetune":
        raise TransferError("plan stage must be 'finetune'")
    ckpt = checkpoint.load_checkpoint(plan.init_from, expect_kind="vocoder")
    model, audio_cfg = vocoder_model_from_checkpoint(ckpt)
    utts = load_plan_corpora(plan)
    if not utts:
        raise TransferError("target corpus is empty")
    am_model = vocab = None
    insert_pauses = False
    if am_checkpoint_path:
        am_ckpt = checkpoint.load_checkpoint(am_checkpoint_path,
                                             expect_kind="acoustic")
        am_model, vocab, _ = acoustic_model_from_checkpoint(am_ckpt)
        insert_pauses = am_ckpt.config.get("insert_pauses", False)
    items = build_vocoder_items(utts, audio_cfg, am_model, vocab,
                                insert_pauses)
    torch.manual_seed(plan.seed)
    history = run_vocoder_training(model, items, plan.steps,
                                   plan.learning_rate, plan.seed, crop_len)
    return checkpoint.Checkpoint(
        model_kind="vocoder",
        config=ckpt.config,
        tensors=checkpoint.tensors_from_module(model),
        training_meta={"stage": plan.stage, "steps": plan.steps,
                       "corpora": list(plan.corpora), "seed": plan.seed,
                       "final_loss": history[-1] if history else None})


def save(ckpt: checkpoint.Checkpoint, path) -> None:
    checkpoint.save_checkpoint(ckpt.tensors, ckpt.config, ckpt.model_kind,
                               ckpt.training_meta, path)
