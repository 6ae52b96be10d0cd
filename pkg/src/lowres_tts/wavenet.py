"""Conditional WaveNet vocoder.

24 gated residual layers of causal dilated convolutions (kernel 2, three
dilation cycles 1..128) over 16 kHz 16-bit audio, conditioned on upsampled
80-dim log-mel frames, with a 10-component discretized mixture-of-logistics
output distribution. Training runs the parallel path; generation runs an
incremental path with per-layer ring buffers that reproduces the parallel
distributions step by step.

The one-sample causal shift is folded into the first residual layer, whose
filter reads only the (shifted) current input: the prediction for sample t
therefore depends on exactly the previous ``receptive_field() - 1`` samples
and never on sample t itself.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, asdict

import numpy as np
import torch
import torch.nn.functional as F
from torch import nn


@dataclass(frozen=True)
class VocoderConfig:
    layers: int = 24
    kernel_size: int = 2
    dilation_cycle_length: int = 8  # dilations 1, 2, 4, ..., 128 per cycle
    residual_channels: int = 32
    skip_channels: int = 64
    conditioning_channels: int = 80
    n_mixtures: int = 10
    sample_rate: int = 16000
    hop_length: int = 200
    log_scale_floor: float = -7.0
    num_levels: int = 65536
    # fixed affine normalization of the log-mel conditioning; raw log-mel
    # values span roughly [-11.5, 9] and would saturate the gated units
    cond_mean: float = -5.0
    cond_std: float = 5.0

    @property
    def dilations(self):
        return [2 ** (i % self.dilation_cycle_length) for i in range(self.layers)]

    def to_dict(self) -> dict:
        return asdict(self)

    @classmethod
    def from_dict(cls, d: dict) -> "VocoderConfig":
        return cls(**d)


def receptive_field(config: VocoderConfig) -> int:
    """RF = 1 + (kernel - 1) * sum(dilations), in samples."""
    return 1 + (config.kernel_size - 1) * sum(config.dilations)


def upsample_conditioning(mel_frames: np.ndarray, hop: int) -> np.ndarray:
    """Repeat each mel frame hop times -> (T * hop, n_mels)."""
    mel_frames = np.asarray(mel_frames)
    return np.repeat(mel_frames, hop, axis=0)


# ---------------------------------------------------------------------------
# Discretized mixture of logistics

def snap_to_grid(x, num_levels: int = 65536):
    """Round samples in [-1, 1] to the uniform num_levels-point grid."""
    x = np.asarray(x, dtype=np.float64)
    k = np.round((x + 1.0) * (num_levels - 1) / 2.0)
    k = np.clip(k, 0, num_levels - 1)
    return (k * 2.0 / (num_levels - 1) - 1.0).astype(np.float32)


def mol_log_prob(x, weight_logits, means, log_scales,
                 num_levels: int = 65536):
    """Log probability of grid samples under a discretized logistic mixture.

    x: (...,) samples on the num_levels grid over [-1, 1].
    weight_logits, means, log_scales: (..., K).
    Interior points integrate the logistic CDF over one grid bin; the two
    edge points absorb the remaining tails.
    """
    if not torch.is_tensor(x):
        x = torch.as_tensor(x)
    half_bins = (x + 1.0) * (num_levels - 1) / 2.0
    k = torch.round(half_bins)
    if torch.any(torch.abs(half_bins - k) > 1e-2):
        raise ValueError("sample not on the quantization grid")

    delta = 1.0 / (num_levels - 1)
    centered = x.unsqueeze(-1) - means
    inv_s = torch.exp(-log_scales)
    a = (centered - delta) * inv_s
    b = (centered + delta) * inv_s

    log_cdf_b = F.logsigmoid(b)
    log_sf_a = F.logsigmoid(-a)  # log(1 - sigmoid(a))
    # log(sigmoid(b) - sigmoid(a)) = log_cdf_b + log_sf_a + log(1 - e^{a-b})
    log_mid = log_cdf_b + log_sf_a + torch.log(-torch.expm1(a - b))

    kk = k.unsqueeze(-1)
    log_p = torch.where(kk <= 0, log_cdf_b,
                        torch.where(kk >= num_levels - 1, log_sf_a, log_mid))
    return torch.logsumexp(F.log_softmax(weight_logits, dim=-1) + log_p, dim=-1)


def sample_mol(weight_logits, means, log_scales, rng: np.random.Generator,
               deterministic: bool = False, u_eps: float = 1e-5) -> float:
    """Draw one sample: categorical over weights, then logistic inverse CDF.

    deterministic=True returns the mean of the highest-weight component.
    """
    wl = np.asarray(weight_logits, dtype=np.float64)
    mu = np.asarray(means, dtype=np.float64)
    ls = np.asarray(log_scales, dtype=np.float64)
    if deterministic:
        return float(np.clip(mu[np.argmax(wl)], -1.0, 1.0))
    probs = np.exp(wl - wl.max())
    probs /= probs.sum()
    i = int(rng.choice(len(probs), p=probs))
    u = rng.uniform(u_eps, 1.0 - u_eps)
    x = mu[i] + math.exp(ls[i]) * (math.log(u) - math.log1p(-u))
    return float(np.clip(x, -1.0, 1.0))


# ---------------------------------------------------------------------------
# Network

class _ResidualLayer(nn.Module):
    def __init__(self, config: VocoderConfig, dilation: int, kernel_size: int):
        super().__init__()
        r = config.residual_channels
        self.dilation = dilation
        self.kernel_size = kernel_size
        self.conv = nn.Conv1d(r, 2 * r, kernel_size, dilation=dilation)
        self.cond_proj = nn.Conv1d(config.conditioning_channels, 2 * r, 1)
        self.res_proj = nn.Conv1d(r, r, 1)
        self.skip_proj = nn.Conv1d(r, config.skip_channels, 1)

    def forward(self, h, cond):
        pad = (self.kernel_size - 1) * self.dilation
        z = self.conv(F.pad(h, (pad, 0))) + self.cond_proj(cond)
        filt, gate = z.chunk(2, dim=1)
        act = torch.tanh(filt) * torch.sigmoid(gate)
        return h + self.res_proj(act), self.skip_proj(act)


class WaveNetVocoder(nn.Module):
    def __init__(self, config: VocoderConfig):
        super().__init__()
        self.config = config
        r = config.residual_channels
        self.input_conv = nn.Conv1d(1, r, 1)
        layers = []
        for i, d in enumerate(config.dilations):
            # first layer reads only the shifted current input; this is the
            # one-sample causal shift (see module docstring)
            k = 1 if i == 0 else config.kernel_size
            layers.append(_ResidualLayer(config, d, k))
        self.layers = nn.ModuleList(layers)
        self.head1 = nn.Conv1d(config.skip_channels, config.skip_channels, 1)
        self.head2 = nn.Conv1d(config.skip_channels, 3 * config.n_mixtures, 1)
        # start the mixture log-scales near the amplitude of typical speech
        # rather than at ~1.0 (half the full-scale range), so early training
        # does not spend its first steps collapsing overly broad mixtures
        with torch.no_grad():
            self.head2.bias[2 * config.n_mixtures:] = -3.0

    def normalize_cond(self, cond):
        return (cond - self.config.cond_mean) / self.config.cond_std

    def forward_parallel(self, audio, cond):
        """Distribution parameters for every sample position.

        audio: (N,) or (B, N) float samples; cond: matching (N, C)/(B, N, C).
        Returns (weight_logits, means, log_scales), each (..., N, K).
        """
        squeeze = audio.dim() == 1
        if squeeze:
            audio = audio.unsqueeze(0)
            cond = cond.unsqueeze(0)
        if audio.shape[1] != cond.shape[1]:
            raise ValueError(
                f"audio length {audio.shape[1]} != conditioning length "
                f"{cond.shape[1]}")
        shifted = F.pad(audio, (1, 0))[:, :-1].unsqueeze(1)  # (B, 1, N)
        cond_t = self.normalize_cond(cond).transpose(1, 2)  # (B, C, N)
        h = self.input_conv(shifted)
        skip_sum = None
        for layer in self.layers:
            h, skip = layer(h, cond_t)
            skip_sum = skip if skip_sum is None else skip_sum + skip
        out = self.head2(F.relu(self.head1(F.relu(skip_sum))))
        out = out.transpose(1, 2)  # (B, N, 3K)
        wl, means, log_s = out.chunk(3, dim=-1)
        log_s = torch.clamp(log_s, min=self.config.log_scale_floor)
        if squeeze:
            return wl.squeeze(0), means.squeeze(0), log_s.squeeze(0)
        return wl, means, log_s


@torch.no_grad()
def generate_incremental(model: WaveNetVocoder, cond, rng=None,
                         deterministic: bool = False,
                         collect_params: bool = False):
    """Autoregressive sample-by-sample generation over a conditioning track.

    cond: (N, C) tensor or array. Returns the waveform (N,) float32, plus the
    per-step distribution parameters when collect_params is set.
    """
    cfg = model.config
    cond = torch.as_tensor(np.asarray(cond, dtype=np.float32))
    n = cond.shape[0]
    if rng is None:
        rng = np.random.default_rng(0)

    # weight views for the per-step path
    w_in = model.input_conv.weight[:, 0, 0]
    b_in = model.input_conv.bias
    layer_mats = []
    for layer in model.layers:
        w = layer.conv.weight  # (2r, r, k)
        layer_mats.append({
            "w_cur": w[:, :, -1], "w_past": w[:, :, 0] if layer.kernel_size == 2 else None,
            "b": layer.conv.bias,
            "w_res": layer.res_proj.weight[:, :, 0], "b_res": layer.res_proj.bias,
            "w_skip": layer.skip_proj.weight[:, :, 0], "b_skip": layer.skip_proj.bias,
        })
    w_h1 = model.head1.weight[:, :, 0]
    b_h1 = model.head1.bias
    w_h2 = model.head2.weight[:, :, 0]
    b_h2 = model.head2.bias

    # conditioning contributions precomputed for the whole track
    cond_n = model.normalize_cond(cond)
    cond_tracks = [layer.cond_proj(cond_n.T.unsqueeze(0)).squeeze(0)
                   for layer in model.layers]  # each (2r, N)

    buffers = [torch.zeros(layer.dilation, cfg.residual_channels)
               if layer.kernel_size == 2 else None
               for layer in model.layers]

    k_mix = cfg.n_mixtures
    out = np.zeros(n, dtype=np.float32)
    params = ([], [], []) if collect_params else None
    prev = torch.zeros(())
    for t in range(n):
        stream = w_in * prev + b_in
        skip_sum = None
        for li, layer in enumerate(model.layers):
            mats = layer_mats[li]
            z = mats["w_cur"] @ stream + mats["b"] + cond_tracks[li][:, t]
            if mats["w_past"] is not None:
                buf = buffers[li]
                slot = t % layer.dilation
                z = z + mats["w_past"] @ buf[slot]
                buf[slot] = stream
            filt, gate = z.chunk(2)
            act = torch.tanh(filt) * torch.sigmoid(gate)
            skip = mats["w_skip"] @ act + mats["b_skip"]
            skip_sum = skip if skip_sum is None else skip_sum + skip
            stream = stream + mats["w_res"] @ act + mats["b_res"]
        head = w_h2 @ F.relu(w_h1 @ F.relu(skip_sum) + b_h1) + b_h2
        wl, mu, log_s = head[:k_mix], head[k_mix:2 * k_mix], head[2 * k_mix:]
        log_s = torch.clamp(log_s, min=cfg.log_scale_floor)
        if collect_params:
            params[0].append(wl.numpy().copy())
            params[1].append(mu.numpy().copy())
            params[2].append(log_s.numpy().copy())
        x = sample_mol(wl.numpy(), mu.numpy(), log_s.numpy(), rng,
                       deterministic=deterministic)
        x = float(snap_to_grid(x, cfg.num_levels))
        out[t] = x
        prev = torch.tensor(x)
    if collect_params:
        return out, tuple(np.stack(p) for p in params)
    return out


def train_step_vocoder(model: WaveNetVocoder, optimizer, audio, cond,
                       grad_clip: float = 1.0):
    """One NLL step; audio must already be snapped to the sample grid."""
    model.train()
    audio = torch.as_tensor(np.asarray(audio, dtype=np.float32))
    cond = torch.as_tensor(np.asarray(cond, dtype=np.float32))
    wl, means, log_s = model.forward_parallel(audio, cond)
    nll = -mol_log_prob(audio, wl, means, log_s, model.config.num_levels).mean()
    if torch.isnan(nll):
        raise RuntimeError(
            f"NaN vocoder loss (audio range [{audio.min():.3f}, "
            f"{audio.max():.3f}], {audio.shape[-1]} samples)")
    optimizer.zero_grad()
    nll.backward()
    torch.nn.utils.clip_grad_norm_(model.parameters(), grad_clip)
    optimizer.step()
    return float(nll.detach())
