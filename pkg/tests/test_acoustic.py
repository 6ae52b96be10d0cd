import numpy as np
import pytest
import torch

from lowres_tts.acoustic import (AMConfig, LocationAttention, Tacotron2Model,
                                 attention_step, compute_losses,
                                 make_memory_mask, synthesize_mel,
                                 teacher_forced_predict, train_step)

TINY = AMConfig(vocab_size=12, embed_dim=16, encoder_dim=16, decoder_dim=16,
                attention_dim=16, prenet_dims=(16, 16), postnet_channels=16,
                n_mels=8)


def make_batch(b=2, l=5, t=7, n_mels=8, seed=0):
    g = torch.Generator().manual_seed(seed)
    ids = torch.randint(1, TINY.vocab_size, (b, l), generator=g)
    mels = torch.randn(b, t, n_mels, generator=g)
    return ids, mels


class TestConfig:
    def test_round_trip(self):
        back = AMConfig.from_dict(TINY.to_dict())
        assert back == TINY

    def test_bad_threshold(self):
        with pytest.raises(ValueError):
            AMConfig(vocab_size=4, stop_threshold=1.5)


class TestForward:
    def test_shapes(self):
        torch.manual_seed(0)
        model = Tacotron2Model(TINY)
        ids, mels = make_batch()
        out = model(ids, mels)
        assert out["mel_pre"].shape == (2, 7, 8)
        assert out["mel_post"].shape == (2, 7, 8)
        assert out["stop_logits"].shape == (2, 7)
        assert out["alignments"].shape == (2, 7, 5)

    def test_alignments_are_distributions(self):
        torch.manual_seed(1)
        model = Tacotron2Model(TINY)
        ids, mels = make_batch()
        out = model(ids, mels)
        sums = out["alignments"].sum(dim=-1)
        assert torch.allclose(sums, torch.ones_like(sums), atol=1e-5)
        assert torch.all(out["alignments"] >= 0)

    def test_memory_mask_zeroes_alignment(self):
        torch.manual_seed(2)
        model = Tacotron2Model(TINY)
        ids, mels = make_batch(b=2, l=6)
        lengths = [6, 3]
        mask = make_memory_mask(lengths, 6)
        out = model(ids, mels, lengths, mask)
        assert torch.all(out["alignments"][1, :, 3:] == 0.0)

    def test_out_of_range_ids_rejected(self):
        torch.manual_seed(3)
        model = Tacotron2Model(TINY)
        with pytest.raises(ValueError, match="vocab"):
            model.encode(torch.tensor([[TINY.vocab_size]]))


class TestAttention:
    def test_single_memory_position_gets_all_mass(self):
        torch.manual_seed(4)
        att = LocationAttention(TINY)
        memory = torch.randn(1, TINY.encoder_dim)
        _, alignment = attention_step(att, torch.randn(TINY.decoder_dim),
                                      memory, torch.ones(1))
        assert alignment.item() == pytest.approx(1.0)

    def test_context_is_convex_combination(self):
        torch.manual_seed(5)
        att = LocationAttention(TINY)
        memory = torch.randn(4, TINY.encoder_dim)
        prev = torch.full((4,), 0.25)
        context, alignment = attention_step(att, torch.randn(TINY.decoder_dim),
                                            memory, prev)
        assert torch.allclose(context, alignment @ memory, atol=1e-6)
        assert alignment.sum().item() == pytest.approx(1.0)


class TestLosses:
    def test_stop_target_on_final_frame(self):
        # perfect logits: +inf-ish at the final valid frame, -inf-ish elsewhere
        mels = torch.zeros(1, 4, 8)
        outputs = {"mel_pre": torch.zeros(1, 4, 8),
                   "mel_post": torch.zeros(1, 4, 8),
                   "stop_logits": torch.tensor([[-20.0, -20.0, 20.0, -20.0]])}
        losses = compute_losses(outputs, mels, [3])
        assert losses["stop"].item() < 1e-6
        assert losses["total"].item() < 1e-6

    def test_padding_invariance(self):
        # extra mel padding must not change the masked causal losses (the
        # postnet is non-causal over time, so only pre-net mel and stop
        # losses are padding-invariant)
        torch.manual_seed(6)
        model = Tacotron2Model(TINY).double()
        model.eval()  # prenet dropout would make the two passes differ
        ids, mels = make_batch(b=1, l=4, t=5)
        mels = mels.double()
        out = model(ids, mels)
        base = compute_losses(out, mels, [5])
        padded = torch.cat([mels, torch.zeros(1, 3, 8).double()], dim=1)
        out2 = model(ids, padded)
        padded_losses = compute_losses(out2, padded, [5])
        for key in ("mel_pre", "stop"):
            assert padded_losses[key].item() == \
                pytest.approx(base[key].item(), rel=1e-10)


class TestTraining:
    def test_loss_decreases(self):
        torch.manual_seed(7)
        model = Tacotron2Model(TINY)
        opt = torch.optim.Adam(model.parameters(), lr=1e-3)
        ids, mels = make_batch()
        first = train_step(model, opt, ids, mels, [5, 5], [7, 7])
        for _ in range(40):
            last = train_step(model, opt, ids, mels, [5, 5], [7, 7])
        assert last["total"] < first["total"]


class TestSynthesis:
    def test_deterministic(self):
        torch.manual_seed(8)
        model = Tacotron2Model(TINY)
        ids = [1, 4, 5, 2]
        mel_a, align_a, stop_a = synthesize_mel(model, ids)
        mel_b, align_b, stop_b = synthesize_mel(model, ids)
        assert np.array_equal(mel_a, mel_b)
        assert np.array_equal(align_a, align_b)
        assert stop_a == stop_b

    def test_respects_max_steps(self):
        torch.manual_seed(9)
        model = Tacotron2Model(TINY)
        mel, aligns, stopped = synthesize_mel(model, [1, 2], max_decoder_steps=6)
        assert mel.shape[0] <= 6
        assert aligns.shape == (mel.shape[0], 2)

    def test_default_cap_is_factor_times_length(self):
        torch.manual_seed(10)
        model = Tacotron2Model(TINY)
        ids = [1, 3, 2]
        mel, _, _ = synthesize_mel(model, ids)
        assert mel.shape[0] <= TINY.max_decoder_steps_factor * len(ids)


class TestTeacherForcedPredict:
    def test_time_aligned(self):
        torch.manual_seed(11)
        model = Tacotron2Model(TINY)
        gt = np.random.default_rng(0).standard_normal((9, 8)).astype(np.float32)
        pred = teacher_forced_predict(model, [1, 4, 2], gt)
        assert pred.shape == gt.shape

    def test_zero_length_rejected(self):
        torch.manual_seed(12)
        model = Tacotron2Model(TINY)
        with pytest.raises(ValueError, match="zero-length"):
            teacher_forced_predict(model, [1, 2], np.zeros((0, 8)))
