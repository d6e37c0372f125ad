import torch
import pytest

from wfdiff.encoder import ConditionalEncoder, EncoderConfig, TemporalState


def small_encoder(feature_dim=6, obs_dim=4, width=5):
    cfg = EncoderConfig(kind="vector", obs_dim=obs_dim, spatial_width=width, feature_dim=feature_dim)
    return ConditionalEncoder(cfg).double()


def zeroed(module):
    with torch.no_grad():
        for p in module.parameters():
            p.zero_()
    return module


class TestSpatialEncoder:
    def test_zero_parameters_zero_output(self):
        enc = zeroed(small_encoder())
        obs = torch.randn(4, dtype=torch.float64)
        assert torch.equal(enc.encode_frame(obs), torch.zeros(5, dtype=torch.float64))

    def test_identical_inputs_identical_embeddings(self):
        enc = small_encoder()
        obs = torch.randn(4, dtype=torch.float64)
        assert torch.equal(enc.encode_frame(obs), enc.encode_frame(obs.clone()))

    def test_embedding_dim_matches_config(self):
        enc = small_encoder(width=7)
        assert enc.encode_frame(torch.randn(4, dtype=torch.float64)).shape == (7,)

    def test_shape_mismatch_rejected(self):
        enc = small_encoder()
        with pytest.raises(ValueError):
            enc.encode_frame(torch.randn(9, dtype=torch.float64))

    def test_tiny_image_kind_shape(self):
        cfg = EncoderConfig(kind="tiny-image", image_shape=(1, 8, 8), spatial_width=6, feature_dim=4)
        enc = ConditionalEncoder(cfg).double()
        out = enc.encode_frame(torch.randn(1, 8, 8, dtype=torch.float64))
        assert out.shape == (6,)


class TestTemporalStep:
    def test_zero_parameters_zero_state_gives_zero(self):
        # gates sigmoid(0)=0.5, candidate tanh(0)=0 -> cell 0 -> hidden 0
        enc = zeroed(small_encoder())
        state = enc.initial_state()
        emb = torch.randn(5, dtype=torch.float64)
        c_t, state2 = enc.temporal_step(emb, state)
        assert torch.equal(c_t, torch.zeros(6, dtype=torch.float64))
        assert torch.equal(state2.cell, torch.zeros(6, dtype=torch.float64))

    def test_output_dim_is_feature_dim(self):
        enc = small_encoder(feature_dim=9)
        c_t, _ = enc.temporal_step(torch.randn(5, dtype=torch.float64), enc.initial_state())
        assert c_t.shape == (9,)

    def test_state_roundtrip_through_serialization(self, tmp_path):
        enc = small_encoder()
        frames = torch.randn(10, 4, dtype=torch.float64)
        _, mid_state = enc.encode_clip(frames[:5])
        path = tmp_path / "state.pt"
        torch.save({"hidden": mid_state.hidden, "cell": mid_state.cell}, path)
        loaded = torch.load(path, weights_only=True)
        restored = TemporalState(hidden=loaded["hidden"], cell=loaded["cell"])
        direct, _ = enc.encode_clip(frames[5:], mid_state)
        resumed, _ = enc.encode_clip(frames[5:], restored)
        assert torch.equal(direct, resumed)


class TestEncodeClip:
    def test_length_one_equals_single_step(self):
        enc = small_encoder()
        frames = torch.randn(1, 4, dtype=torch.float64)
        cs, state = enc.encode_clip(frames)
        emb = enc.encode_frame(frames[0])
        c_t, state2 = enc.temporal_step(emb, enc.initial_state())
        assert torch.equal(cs[0], c_t)
        assert torch.equal(state.cell, state2.cell)

    def test_equals_per_frame_composition(self):
        enc = small_encoder()
        frames = torch.randn(7, 4, dtype=torch.float64)
        cs, _ = enc.encode_clip(frames)
        state = enc.initial_state()
        for t in range(7):
            c_t, state = enc.temporal_step(enc.encode_frame(frames[t]), state)
            assert torch.equal(cs[t], c_t)

    def test_split_clip_with_threaded_state_matches(self):
        enc = small_encoder()
        frames = torch.randn(12, 4, dtype=torch.float64)
        whole, end = enc.encode_clip(frames)
        first, mid = enc.encode_clip(frames[:5])
        second, end2 = enc.encode_clip(frames[5:], mid)
        assert torch.equal(torch.cat([first, second]), whole)
        assert torch.equal(end.hidden, end2.hidden)

    def test_empty_clip_rejected(self):
        enc = small_encoder()
        with pytest.raises(ValueError):
            enc.encode_clip(torch.zeros(0, 4, dtype=torch.float64))

    def test_online_causality(self):
        enc = small_encoder()
        frames = torch.randn(10, 4, dtype=torch.float64)
        cs, _ = enc.encode_clip(frames)
        perturbed = frames.clone()
        perturbed[6:] += 100.0
        cs2, _ = enc.encode_clip(perturbed)
        assert torch.equal(cs[:6], cs2[:6])
        assert not torch.equal(cs[6:], cs2[6:])

    @torch.no_grad()
    def test_chunked_equals_whole_within_tolerance(self):
        enc = small_encoder(feature_dim=16, obs_dim=8, width=12)
        frames = torch.randn(64, 8, dtype=torch.float64)
        whole, _ = enc.encode_clip(frames)
        state = None
        chunks = []
        for start in range(0, 64, 16):
            out, state = enc.encode_clip(frames[start : start + 16], state)
            chunks.append(out)
        assert float((torch.cat(chunks) - whole).abs().max()) < 1e-6
