import numpy as np
import pytest

from videoseq import (
    ConfigurationError,
    DimensionError,
    ModelSpec,
    Tensor,
    TimeMask,
    build_model,
    load_checkpoint,
    mlp_classify,
    save_checkpoint,
)
from videoseq.gradcheck import grad_check, toy_spec
from videoseq.models import MlpHead

ALL_KINDS = (
    "video_level",
    "vlad_mlp",
    "two_stream_lstm",
    "two_stream_gru",
    "ff_lstm",
    "ff_gru",
    "temporal_resnet",
    "stacked_lstm",
)


def tiny_spec(kind, **overrides):
    kwargs = dict(
        kind=kind,
        vocab_size=5,
        visual_dim=7,
        audio_dim=3,
        hidden_size=4,
        depth=2,
        trb_count=2,
        trb_filters=6,
        fc_sizes=(8, 5),
        vlad_clusters=3,
        seed=1,
    )
    kwargs.update(overrides)
    return ModelSpec(**kwargs)


def random_batch(spec, batch, time, lengths=None, seed=0):
    rng = np.random.default_rng(seed)
    visual = Tensor(rng.normal(size=(batch, spec.visual_dim, time)))
    audio = Tensor(rng.normal(size=(batch, spec.audio_dim, time)))
    if lengths is None:
        lengths = np.full(batch, time)
    mask = TimeMask(batch, time, np.asarray(lengths))
    return visual, audio, mask


def build_ready(spec):
    model = build_model(spec)
    if spec.kind == "vlad_mlp":
        rng = np.random.default_rng(99)
        model.codebook.centers[...] = rng.normal(size=model.codebook.centers.shape)
    return model


class TestModelSpec:
    def test_defaults_match_published_architecture(self):
        spec = ModelSpec(kind="temporal_resnet", vocab_size=100)
        assert spec.trb_count == 9
        assert spec.trb_filters == 1024
        assert spec.visual_dim == 1024
        assert spec.audio_dim == 128
        assert spec.feature_dim == 1152
        assert spec.vlad_clusters == 256

    def test_irrelevant_fields_ignored(self):
        # trb settings are meaningless for a video_level model but never rejected
        spec = tiny_spec("video_level", trb_filters=1, trb_count=99)
        out = build_ready(spec).forward(*random_batch(spec, 2, 3))
        assert out.probabilities.shape == (2, 5)

    def test_unknown_kind_rejected(self):
        with pytest.raises(ConfigurationError):
            ModelSpec(kind="transformer", vocab_size=5)

    def test_head_width_must_match_vocab(self):
        with pytest.raises(ConfigurationError):
            ModelSpec(kind="video_level", vocab_size=5, fc_sizes=(8, 7))

    def test_same_seed_same_parameters(self):
        for kind in ALL_KINDS:
            a = build_model(tiny_spec(kind))
            b = build_model(tiny_spec(kind))
            for (name_a, pa), (name_b, pb) in zip(a.named_parameters(), b.named_parameters()):
                assert name_a == name_b
                assert np.array_equal(pa.data, pb.data), (kind, name_a)


class TestOutputContract:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_shape_and_open_interval(self, kind):
        spec = tiny_spec(kind)
        model = build_ready(spec)
        for time in (1, 4, 9):
            visual, audio, mask = random_batch(spec, 2, time, seed=time)
            out = model.forward(visual, audio, mask, train=True)
            assert out.probabilities.shape == (2, 5)
            assert np.all(out.probabilities.data > 0.0)
            assert np.all(out.probabilities.data < 1.0)

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_padding_values_are_inert(self, kind):
        spec = tiny_spec(kind)
        model = build_ready(spec)
        visual, audio, mask = random_batch(spec, 3, 6, lengths=[2, 4, 6], seed=5)
        base = model.forward(visual, audio, mask, train=True).probabilities.data
        rng = np.random.default_rng(6)
        pad = ~mask.bool_matrix()
        visual.data[:, :, :][np.broadcast_to(pad[:, None, :], visual.shape)] = rng.normal(
            size=int(pad.sum()) * spec.visual_dim
        )
        audio.data[np.broadcast_to(pad[:, None, :], audio.shape)] = rng.normal(
            size=int(pad.sum()) * spec.audio_dim
        )
        poked = model.forward(visual, audio, mask, train=True).probabilities.data
        assert np.array_equal(base, poked), kind

    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_extending_with_padded_frames_is_inert(self, kind):
        spec = tiny_spec(kind)
        model = build_ready(spec)
        visual, audio, mask = random_batch(spec, 2, 5, seed=7)
        base = model.forward(visual, audio, mask, train=True).probabilities.data
        extended_v = Tensor(np.pad(visual.data, ((0, 0), (0, 0), (0, 3))))
        extended_a = Tensor(np.pad(audio.data, ((0, 0), (0, 0), (0, 3))))
        extended_mask = TimeMask(2, 8, mask.valid_lengths)
        grown = model.forward(extended_v, extended_a, extended_mask, train=True).probabilities.data
        assert np.max(np.abs(base - grown)) < 1e-12, kind

    def test_modality_dimension_mismatch(self):
        spec = tiny_spec("two_stream_lstm")
        model = build_ready(spec)
        rng = np.random.default_rng(0)
        bad_visual = Tensor(rng.normal(size=(2, spec.visual_dim + 1, 3)))
        audio = Tensor(rng.normal(size=(2, spec.audio_dim, 3)))
        with pytest.raises(DimensionError):
            model.forward(bad_visual, audio, TimeMask.full(2, 3))


class TestVideoLevel:
    def test_repeated_frames_same_output(self):
        spec = tiny_spec("video_level")
        model = build_ready(spec)
        rng = np.random.default_rng(1)
        frame_v = rng.normal(size=(1, spec.visual_dim, 1))
        frame_a = rng.normal(size=(1, spec.audio_dim, 1))
        outputs = []
        for k in (1, 3, 6):
            v = Tensor(np.repeat(frame_v, k, axis=2))
            a = Tensor(np.repeat(frame_a, k, axis=2))
            outputs.append(model.forward(v, a, TimeMask.full(1, k)).probabilities.data)
        assert np.allclose(outputs[0], outputs[1], atol=1e-12)
        assert np.allclose(outputs[0], outputs[2], atol=1e-12)

    def test_frame_permutation_invariant(self):
        spec = tiny_spec("video_level")
        model = build_ready(spec)
        visual, audio, mask = random_batch(spec, 1, 5, seed=2)
        base = model.forward(visual, audio, mask).probabilities.data
        perm = np.random.default_rng(3).permutation(5)
        shuffled = model.forward(
            Tensor(visual.data[:, :, perm]), Tensor(audio.data[:, :, perm]), mask
        ).probabilities.data
        assert np.allclose(base, shuffled, atol=1e-12)

    def test_sequence_model_is_not_permutation_invariant(self):
        spec = tiny_spec("two_stream_lstm")
        model = build_ready(spec)
        visual, audio, mask = random_batch(spec, 1, 5, seed=4)
        base = model.forward(visual, audio, mask).probabilities.data
        perm = np.array([4, 2, 0, 3, 1])
        shuffled = model.forward(
            Tensor(visual.data[:, :, perm]), Tensor(audio.data[:, :, perm]), mask
        ).probabilities.data
        assert not np.allclose(base, shuffled, atol=1e-9)


class TestMlpHead:
    def test_zero_weights_give_half(self):
        head = MlpHead(4, (3, 2), np.random.default_rng(0))
        for p in (head.w1, head.b1, head.w2, head.b2):
            p.data[...] = 0.0
        out = mlp_classify(head, Tensor(np.random.default_rng(1).normal(size=(3, 4))))
        assert np.array_equal(out.probabilities.data, np.full((3, 2), 0.5))

    def test_final_bias_monotonicity(self):
        head = MlpHead(4, (3, 2), np.random.default_rng(2))
        x = Tensor(np.random.default_rng(3).normal(size=(2, 4)))
        before = mlp_classify(head, x).probabilities.data
        head.b2.data[1] += 0.5
        after = mlp_classify(head, x).probabilities.data
        assert np.all(after[:, 1] > before[:, 1])
        assert np.array_equal(after[:, 0], before[:, 0])

    def test_gradient(self):
        from videoseq import check_gradients
        from videoseq.autodiff import tensor_sum

        head = MlpHead(4, (3, 2), np.random.default_rng(4))
        x = Tensor(np.random.default_rng(5).normal(size=(3, 4)))

        def f():
            return tensor_sum(head.forward(x))

        worst = check_gradients(f, list(head.parameters("head")), step=1e-5)
        assert max(worst.values()) < 1e-6


class TestFastForward:
    def test_depth_one_and_seven_produce_valid_probabilities(self):
        for depth in (1, 7):
            spec = tiny_spec("ff_lstm", depth=depth, hidden_size=3)
            model = build_ready(spec)
            visual, audio, mask = random_batch(spec, 2, 3, seed=depth)
            out = model.forward(visual, audio, mask).probabilities
            assert out.shape == (2, 5)
            assert np.all((out.data > 0) & (out.data < 1))

    def test_zero_weights_make_output_input_independent(self):
        spec = tiny_spec("ff_gru", depth=2)
        model = build_ready(spec)
        for _, p in model.named_parameters():
            p.data[...] = 0.0
        # give the fast-forward biases some signal so the constant is nontrivial
        for _, _, _, ff_b in model.layers:
            ff_b.data[...] = 0.3
        out_a = model.forward(*random_batch(spec, 2, 4, seed=8)).probabilities.data
        out_b = model.forward(*random_batch(spec, 2, 4, seed=9)).probabilities.data
        assert np.allclose(out_a, out_b, atol=1e-15)
        assert np.allclose(out_a, 0.5, atol=1e-12)  # zero head on a constant

    def test_depth_three_gradients_and_norms(self):
        spec = toy_spec("ff_lstm")
        report = grad_check(spec, sample_count=3, seed=11)
        assert report.passed, [l for l in report.lines()]
        per_layer = {}
        for block in report.blocks:
            if block.name.startswith("layer"):
                per_layer.setdefault(block.name.split(".")[0], []).append(block)
        assert set(per_layer) == {"layer0", "layer1", "layer2"}


class TestTemporalResnet:
    def test_zeroed_block_reduces_to_relu_of_shortcut(self):
        spec = tiny_spec("temporal_resnet", trb_count=1)
        model = build_ready(spec)
        block = model.blocks[0]
        for j in (1, 2):
            k, b, gamma, beta, state = block[j]
            k.data[...] = 0.0
            b.data[...] = 0.0
            gamma.data[...] = 0.0
            beta.data[...] = 0.0
        # drive the block directly with a nonnegative input
        import videoseq.autodiff as ad

        rng = np.random.default_rng(12)
        x = Tensor(np.abs(rng.normal(size=(2, spec.trb_filters, 4))))
        mask = TimeMask.full(2, 4)
        k1, b1, g1, be1, s1 = block[1]
        k2, b2, g2, be2, s2 = block[2]
        y = ad.relu(ad.batchnorm_time(ad.conv1d_same(x, k1, b1), mask, g1, be1, "train", s1))
        y = ad.batchnorm_time(ad.conv1d_same(y, k2, b2), mask, g2, be2, "train", s2)
        out = ad.relu(x + y)
        assert np.array_equal(out.data, x.data)

    def test_gradients_at_toy_size(self):
        report = grad_check(toy_spec("temporal_resnet"), sample_count=3, seed=13)
        assert report.passed

    def test_eval_mode_requires_training_first(self):
        from videoseq import StateError

        spec = tiny_spec("temporal_resnet")
        model = build_ready(spec)
        with pytest.raises(StateError):
            model.forward(*random_batch(spec, 1, 3), train=False)


class TestCheckpoint:
    @pytest.mark.parametrize("kind", ALL_KINDS)
    def test_round_trip_bit_exact(self, kind, tmp_path):
        spec = tiny_spec(kind)
        model = build_ready(spec)
        # make some state non-default so the round trip is meaningful
        if kind == "temporal_resnet":
            model.forward(*random_batch(spec, 2, 4, seed=20), train=True)
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path)
        assert loaded.spec == spec
        path2 = tmp_path / "m2.ckpt"
        save_checkpoint(path2, loaded)
        assert path.read_bytes() == path2.read_bytes()

    def test_prediction_identical_after_round_trip(self, tmp_path):
        spec = tiny_spec("temporal_resnet")
        model = build_ready(spec)
        batch = random_batch(spec, 2, 4, seed=21)
        model.forward(*batch, train=True)  # populate running stats
        before = model.forward(*batch, train=False).probabilities.data
        path = tmp_path / "m.ckpt"
        save_checkpoint(path, model)
        loaded = load_checkpoint(path)
        after = loaded.forward(*batch, train=False).probabilities.data
        assert np.array_equal(before, after)

    def test_bad_magic(self, tmp_path):
        from videoseq import FormatError

        path = tmp_path / "junk.ckpt"
        path.write_bytes(b"WHAT" * 10)
        with pytest.raises(FormatError):
            load_checkpoint(path)

    def test_truncated_checkpoint(self, tmp_path):
        from videoseq import CorruptionError

        spec = tiny_spec("video_level")
        model = build_ready(spec)
        path = tmp_path / "full.ckpt"
        save_checkpoint(path, model)
        cut = tmp_path / "cut.ckpt"
        cut.write_bytes(path.read_bytes()[:-20])
        with pytest.raises(CorruptionError, match=r"byte \d+"):
            load_checkpoint(cut)
