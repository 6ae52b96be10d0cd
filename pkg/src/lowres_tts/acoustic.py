"""Attention seq2seq acoustic model: letter ids -> 80-dim log-mel frames.

Encoder (embedding, conv stack, BiLSTM), location-sensitive attention
decoder with a stop-token head, and a convolutional postnet. Sizes are
desk-scale. There is no sampling anywhere in the model, so synthesis is
deterministic given parameters.
"""

from __future__ import annotations

from dataclasses import dataclass, asdict, field

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class AMConfig:
    vocab_size: int
    embed_dim: int = 64
    encoder_dim: int = 64
    decoder_dim: int = 128
    attention_dim: int = 64
    attention_location_filters: int = 8
    attention_location_kernel: int = 15
    prenet_dims: tuple = (64, 64)
    postnet_layers: int = 3
    postnet_channels: int = 64
    postnet_kernel: int = 5
    n_mels: int = 80
    max_decoder_steps_factor: int = 10
    stop_threshold: float = 0.5
    teacher_forcing_ratio: float = 1.0

    def __post_init__(self):
        if not (0.0 < self.stop_threshold < 1.0):
            raise ValueError("stop_threshold must be in (0, 1)")

    def to_dict(self) -> dict:
        d = asdict(self)
        d["prenet_dims"] = list(self.prenet_dims)
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "AMConfig":
        d = dict(d)
        d["prenet_dims"] = tuple(d["prenet_dims"])
        return cls(**d)


class LocationAttention(nn.Module):
    """Additive attention over encoder memory with convolutional features of
    the previous alignment."""

    def __init__(self, config: AMConfig):
        super().__init__()
        pad = (config.attention_location_kernel - 1) // 2
        self.query_proj = nn.Linear(config.decoder_dim, config.attention_dim,
                                    bias=False)
        self.memory_proj = nn.Linear(config.encoder_dim, config.attention_dim,
                                     bias=False)
        self.location_conv = nn.Conv1d(1, config.attention_location_filters,
                                       config.attention_location_kernel,
                                       padding=pad, bias=False)
        self.location_proj = nn.Linear(config.attention_location_filters,
                                       config.attention_dim, bias=False)
        self.score = nn.Linear(config.attention_dim, 1, bias=False)

    def forward(self, query, memory, processed_memory, prev_alignment,
                mask=None):
        """query (B, D), memory (B, L, E), prev_alignment (B, L) summing to 1.

        Returns (context (B, E), alignment (B, L)).
        """
        loc = self.location_conv(prev_alignment.unsqueeze(1)).transpose(1, 2)
        energies = self.score(torch.tanh(
            self.query_proj(query).unsqueeze(1)
            + processed_memory
            + self.location_proj(loc))).squeeze(-1)
        if mask is not None:
            energies = energies.masked_fill(mask, float("-inf"))
        alignment = torch.softmax(energies, dim=-1)
        context = torch.bmm(alignment.unsqueeze(1), memory).squeeze(1)
        return context, alignment


def attention_step(attention: LocationAttention, query, memory,
                   prev_alignment):
    """Single-utterance attention: query (D,), memory (L, E), prev (L,)."""
    context, alignment = attention(query.unsqueeze(0), memory.unsqueeze(0),
                                   attention.memory_proj(memory).unsqueeze(0),
                                   prev_alignment.unsqueeze(0))
    return context.squeeze(0), alignment.squeeze(0)


class Tacotron2Model(nn.Module):
    def __init__(self, config: AMConfig):
        super().__init__()
        self.config = config
        c = config
        self.embedding = nn.Embedding(c.vocab_size, c.embed_dim, padding_idx=0)
        self.encoder_convs = nn.ModuleList([
            nn.Conv1d(c.embed_dim if i == 0 else c.encoder_dim, c.encoder_dim,
                      5, padding=2)
            for i in range(2)])
        self.encoder_rnn = nn.LSTM(c.encoder_dim, c.encoder_dim // 2,
                                   batch_first=True, bidirectional=True)
        prenet_layers = []
        in_dim = c.n_mels
        for out_dim in c.prenet_dims:
            prenet_layers.append(nn.Linear(in_dim, out_dim))
            in_dim = out_dim
        self.prenet = nn.ModuleList(prenet_layers)
        self.attention_rnn = nn.LSTMCell(c.prenet_dims[-1] + c.encoder_dim,
                                         c.decoder_dim)
        self.attention = LocationAttention(c)
        self.decoder_rnn = nn.LSTMCell(c.decoder_dim + c.encoder_dim,
                                       c.decoder_dim)
        self.mel_proj = nn.Linear(c.decoder_dim + c.encoder_dim, c.n_mels)
        self.stop_proj = nn.Linear(c.decoder_dim + c.encoder_dim, 1)
        postnet = []
        for i in range(c.postnet_layers):
            in_ch = c.n_mels if i == 0 else c.postnet_channels
            out_ch = c.n_mels if i == c.postnet_layers - 1 else c.postnet_channels
            postnet.append(nn.Conv1d(in_ch, out_ch, c.postnet_kernel,
                                     padding=(c.postnet_kernel - 1) // 2))
        self.postnet = nn.ModuleList(postnet)

    # -- encoder ----------------------------------------------------------
    def encode(self, ids, text_lengths=None):
        """ids (B, L) -> encoder memory (B, L, encoder_dim)."""
        if int(ids.max()) >= self.config.vocab_size:
            raise ValueError(
                f"token id {int(ids.max())} >= vocab size "
                f"{self.config.vocab_size}")
        x = self.embedding(ids).transpose(1, 2)
        for conv in self.encoder_convs:
            x = F.relu(conv(x))
        x = x.transpose(1, 2)
        memory, _ = self.encoder_rnn(x)
        if text_lengths is not None:
            mask = (torch.arange(ids.shape[1])[None, :]
                    >= torch.as_tensor(text_lengths)[:, None])
            memory = memory.masked_fill(mask.unsqueeze(-1), 0.0)
        return memory

    def _prenet(self, frame):
        # dropout during training only: it regularizes the decoder against
        # exposure bias (free-running frames differ from teacher-forced ones)
        # while keeping inference fully deterministic
        h = frame
        for lin in self.prenet:
            h = F.dropout(F.relu(lin(h)), p=0.5, training=self.training)
        return h

    def _init_decoder_state(self, memory):
        b, l, _ = memory.shape
        dt = memory.dtype
        dev = memory.device
        d = self.config.decoder_dim
        alignment = torch.zeros(b, l, dtype=dt, device=dev)
        alignment[:, 0] = 1.0
        return {
            "att_h": torch.zeros(b, d, dtype=dt, device=dev),
            "att_c": torch.zeros(b, d, dtype=dt, device=dev),
            "dec_h": torch.zeros(b, d, dtype=dt, device=dev),
            "dec_c": torch.zeros(b, d, dtype=dt, device=dev),
            "context": torch.zeros(b, self.config.encoder_dim, dtype=dt,
                                   device=dev),
            "alignment": alignment,
            "processed_memory": self.attention.memory_proj(memory),
        }

    def decode_step(self, prev_frame, state, memory, memory_mask=None):
        """One decoder step: previous mel frame -> (frame, stop logit)."""
        pre = self._prenet(prev_frame)
        att_in = torch.cat([pre, state["context"]], dim=-1)
        state["att_h"], state["att_c"] = self.attention_rnn(
            att_in, (state["att_h"], state["att_c"]))
        state["context"], state["alignment"] = self.attention(
            state["att_h"], memory, state["processed_memory"],
            state["alignment"], memory_mask)
        dec_in = torch.cat([state["att_h"], state["context"]], dim=-1)
        state["dec_h"], state["dec_c"] = self.decoder_rnn(
            dec_in, (state["dec_h"], state["dec_c"]))
        proj_in = torch.cat([state["dec_h"], state["context"]], dim=-1)
        frame = self.mel_proj(proj_in)
        stop_logit = self.stop_proj(proj_in).squeeze(-1)
        return frame, stop_logit

    def _postnet(self, mel):
        x = mel.transpose(1, 2)
        for i, conv in enumerate(self.postnet):
            x = conv(x)
            if i < len(self.postnet) - 1:
                x = torch.tanh(x)
        return mel + x.transpose(1, 2)

    # -- teacher-forced path ----------------------------------------------
    def forward(self, ids, mels, text_lengths=None, memory_mask=None):
        """Teacher-forced decode over padded batches.

        ids (B, L), mels (B, T, n_mels). Returns dict with mel_pre, mel_post,
        stop_logits (B, T) and alignments (B, T, L).
        """
        memory = self.encode(ids, text_lengths)
        state = self._init_decoder_state(memory)
        b, t, _ = mels.shape
        go = torch.zeros(b, self.config.n_mels, dtype=memory.dtype,
                         device=memory.device)
        frames, stops, aligns = [], [], []
        prev = go
        for step in range(t):
            frame, stop_logit = self.decode_step(prev, state, memory,
                                                 memory_mask)
            frames.append(frame)
            stops.append(stop_logit)
            aligns.append(state["alignment"])
            prev = mels[:, step]
        mel_pre = torch.stack(frames, dim=1)
        mel_post = self._postnet(mel_pre)
        return {"mel_pre": mel_pre, "mel_post": mel_post,
                "stop_logits": torch.stack(stops, dim=1),
                "alignments": torch.stack(aligns, dim=1)}


def make_memory_mask(text_lengths, max_len):
    return (torch.arange(max_len)[None, :]
            >= torch.as_tensor(text_lengths)[:, None])


def compute_losses(outputs, mels, mel_lengths, stop_pos_weight: float = 8.0):
    """Masked MSE (pre + post) plus stop BCE; stop target is 1 on the final
    frame of each utterance only.

    The positive stop frame is one among dozens, so its BCE term is
    up-weighted; without this the stop probability rarely crosses threshold
    in free-running synthesis."""
    b, t, _ = mels.shape
    lengths = torch.as_tensor(mel_lengths)
    frame_mask = (torch.arange(t)[None, :] < lengths[:, None]).to(mels.dtype)
    denom = frame_mask.sum() * mels.shape[-1]

    def masked_mse(pred):
        err = (pred - mels) ** 2 * frame_mask.unsqueeze(-1)
        return err.sum() / denom

    stop_targets = torch.zeros(b, t, dtype=mels.dtype)
    stop_targets[torch.arange(b), lengths - 1] = 1.0
    bce = F.binary_cross_entropy_with_logits(
        outputs["stop_logits"], stop_targets, reduction="none",
        pos_weight=torch.tensor(stop_pos_weight, dtype=mels.dtype))
    stop_loss = (bce * frame_mask).sum() / frame_mask.sum()

    mel_pre_loss = masked_mse(outputs["mel_pre"])
    mel_post_loss = masked_mse(outputs["mel_post"])
    total = mel_pre_loss + mel_post_loss + stop_loss
    return {"total": total, "mel_pre": mel_pre_loss, "mel_post": mel_post_loss,
            "stop": stop_loss}


def train_step(model: Tacotron2Model, optimizer, ids, mels, text_lengths,
               mel_lengths, grad_clip: float = 1.0):
    """One optimizer step on a padded batch; returns loss components."""
    model.train()
    memory_mask = make_memory_mask(text_lengths, ids.shape[1])
    outputs = model(ids, mels, text_lengths, memory_mask)
    losses = compute_losses(outputs, mels, mel_lengths)
    if torch.isnan(losses["total"]):
        raise RuntimeError(
            "NaN acoustic loss "
            f"(components: { {k: float(v) for k, v in losses.items()} })")
    optimizer.zero_grad()
    losses["total"].backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return {k: float(v.detach()) for k, v in losses.items()}


@torch.no_grad()
def synthesize_mel(model: Tacotron2Model, ids, max_decoder_steps=None):
    """Free-running synthesis for one utterance.

    ids: 1-D int tensor/list. Returns (mel (T, n_mels) float32 array,
    alignments (T, L) array, stopped_naturally flag).
    """
    model.eval()
    ids = torch.as_tensor(ids, dtype=torch.long).unsqueeze(0)
    if max_decoder_steps is None:
        max_decoder_steps = model.config.max_decoder_steps_factor * ids.shape[1]
    memory = model.encode(ids)
    state = model._init_decoder_state(memory)
    prev = torch.zeros(1, model.config.n_mels)
    frames, aligns = [], []
    stopped = False
    for _ in range(max_decoder_steps):
        frame, stop_logit = model.decode_step(prev, state, memory)
        frames.append(frame)
        aligns.append(state["alignment"])
        prev = frame
        if torch.sigmoid(stop_logit)[0] > model.config.stop_threshold:
            stopped = True
            break
    mel_pre = torch.stack(frames, dim=1)
    mel_post = model._postnet(mel_pre)
    assert mel_post.shape[1] <= max_decoder_steps
    return (mel_post.squeeze(0).numpy().astype(np.float32),
            torch.stack(aligns, dim=1).squeeze(0).numpy(), stopped)


@torch.no_grad()
def teacher_forced_predict(model: Tacotron2Model, ids, gt_mel):
    """Predicted mel time-aligned to a ground-truth mel (vocoder conditioning)."""
    model.eval()
    gt = torch.as_tensor(np.asarray(gt_mel, dtype=np.float32))
    if gt.shape[0] == 0:
        raise ValueError("zero-length ground-truth mel")
    ids = torch.as_tensor(ids, dtype=torch.long).unsqueeze(0)
    outputs = model(ids, gt.unsqueeze(0))
    return outputs["mel_post"].squeeze(0).numpy().astype(np.float32)
