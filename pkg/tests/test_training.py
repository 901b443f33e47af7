import numpy as np
import pytest

from videoseq import (
    ConfigurationError,
    DimensionError,
    InputError,
    ModelSpec,
    Tensor,
    TrainingError,
    backward,
    check_gradients,
    generate_synthetic,
)
from videoseq.metrics import PredictionSet, gap_oracle, read_prediction_file, write_prediction_file
from videoseq.training import (
    Adam,
    TrainConfig,
    bce_loss,
    ensemble_average,
    evaluate,
    predict,
    train,
)


def spec_for(kind, vocab=6, **overrides):
    kwargs = dict(
        kind=kind,
        vocab_size=vocab,
        visual_dim=8,
        audio_dim=4,
        hidden_size=6,
        depth=2,
        trb_count=2,
        trb_filters=6,
        fc_sizes=(12, vocab),
        vlad_clusters=3,
        seed=3,
    )
    kwargs.update(overrides)
    return ModelSpec(**kwargs)


@pytest.fixture(scope="module")
def dataset(tmp_path_factory):
    path = tmp_path_factory.mktemp("data") / "train.bin"
    generate_synthetic(
        path, vocab_size=6, video_count=24, seed=5, noise_sigma=0.3,
        visual_dim=8, audio_dim=4, max_frames=10,
    )
    return str(path)


class TestBceLoss:
    def test_perfect_prediction_is_near_zero(self):
        y = np.array([[1.0, 0.0], [0.0, 1.0]])
        p = Tensor(y.copy())
        assert bce_loss(p, y).item() < 1e-6

    def test_uniform_half_is_ln2(self):
        y = np.array([[1.0, 0.0, 1.0]])
        loss = bce_loss(Tensor(np.full((1, 3), 0.5)), y)
        assert loss.item() == pytest.approx(np.log(2.0), abs=1e-12)

    def test_gradient(self):
        rng = np.random.default_rng(0)
        p = Tensor(rng.uniform(0.05, 0.95, size=(2, 4)), requires_grad=True)
        y = (rng.random(size=(2, 4)) < 0.5).astype(np.float64)

        worst = check_gradients(lambda: bce_loss(p, y), [("p", p)], step=1e-6)
        assert worst["p"] < 1e-6

    def test_shape_mismatch(self):
        with pytest.raises(DimensionError):
            bce_loss(Tensor(np.zeros((1, 2))), np.zeros((1, 3)))

    def test_minimized_at_targets(self):
        rng = np.random.default_rng(1)
        y = (rng.random(size=(2, 3)) < 0.5).astype(np.float64)
        at_target = bce_loss(Tensor(np.abs(y - 1e-7)), y).item()
        for _ in range(20):
            other = Tensor(rng.uniform(0.01, 0.99, size=(2, 3)))
            assert bce_loss(other, y).item() >= at_target


class TestAdam:
    def test_zero_gradients_leave_parameters(self):
        p = Tensor(np.array([1.0, -2.0]), requires_grad=True)
        opt = Adam([("p", p)], learning_rate=0.1)
        p.grad = np.zeros(2)
        opt.step()
        assert np.array_equal(p.data, [1.0, -2.0])
        assert opt.state.step_count == 1

    def test_first_step_moves_by_learning_rate(self):
        # bias correction makes the first update lr * g/(|g| + eps-scale)
        p = Tensor(np.array([0.0]), requires_grad=True)
        opt = Adam([("p", p)], learning_rate=0.05)
        p.grad = np.array([1.0])
        opt.step()
        assert p.data[0] == pytest.approx(-0.05, rel=1e-6)

    def test_clipping_equals_scaled_gradients(self):
        rng = np.random.default_rng(2)
        g = rng.normal(size=5)
        g = g / np.linalg.norm(g) * 10.0  # norm exactly 10

        p1 = Tensor(np.zeros(5), requires_grad=True)
        clipped = Adam([("p", p1)], learning_rate=0.1, clip_norm=1.0)
        p1.grad = g.copy()
        clipped.step()

        p2 = Tensor(np.zeros(5), requires_grad=True)
        scaled = Adam([("p", p2)], learning_rate=0.1)
        p2.grad = g * 0.1
        scaled.step()

        assert np.allclose(p1.data, p2.data, atol=1e-15)

    def test_non_finite_gradient_names_block(self):
        p = Tensor(np.zeros(2), requires_grad=True)
        opt = Adam([("encoder.w", p)], learning_rate=0.1)
        p.grad = np.array([np.nan, 0.0])
        with pytest.raises(TrainingError, match="encoder.w"):
            opt.step()

    def test_descends_on_quadratic(self):
        p = Tensor(np.array([5.0]), requires_grad=True)
        opt = Adam([("p", p)], learning_rate=0.2)
        for _ in range(200):
            opt.zero_grad()
            loss = (p * p).sum()
            backward(loss)
            opt.step()
        assert abs(p.data[0]) < 1e-2


class TestTrain:
    def test_identical_configs_identical_logs(self, dataset, tmp_path):
        def run(tag):
            config = TrainConfig(
                model=spec_for("two_stream_gru"),
                learning_rate=5e-3,
                batch_size=8,
                epochs=3,
                seed=11,
                train_data=dataset,
                checkpoint_path=str(tmp_path / f"{tag}.ckpt"),
            )
            return train(config)

        a, b = run("a"), run("b")
        assert a.log_lines == b.log_lines
        assert (tmp_path / "a.ckpt").read_bytes() == (tmp_path / "b.ckpt").read_bytes()

    def test_loss_decreases(self, dataset, tmp_path):
        config = TrainConfig(
            model=spec_for("video_level"),
            learning_rate=1e-2,
            batch_size=8,
            epochs=10,
            seed=1,
            train_data=dataset,
            checkpoint_path=str(tmp_path / "vl.ckpt"),
        )
        result = train(config)
        assert result.epoch_losses[-1] < result.epoch_losses[0]
        assert all(np.isfinite(result.grad_norms))

    def test_vlad_mlp_trains(self, dataset, tmp_path):
        config = TrainConfig(
            model=spec_for("vlad_mlp"),
            learning_rate=1e-2,
            batch_size=8,
            epochs=8,
            seed=2,
            train_data=dataset,
            checkpoint_path=str(tmp_path / "vlad.ckpt"),
        )
        result = train(config)
        assert result.epoch_losses[-1] < result.epoch_losses[0]

    def test_dimension_mismatch_fails_before_first_step(self, dataset, tmp_path):
        config = TrainConfig(
            model=spec_for("video_level", visual_dim=16),
            train_data=dataset,
            checkpoint_path=str(tmp_path / "x.ckpt"),
        )
        with pytest.raises(ConfigurationError):
            train(config)

    def test_deep_stack_clip_rule(self):
        assert TrainConfig(model=spec_for("ff_lstm", depth=4)).resolved_clip_norm() == 5.0
        assert TrainConfig(model=spec_for("ff_lstm", depth=2)).resolved_clip_norm() is None
        assert TrainConfig(model=spec_for("temporal_resnet")).resolved_clip_norm() is None
        cfg = TrainConfig(model=spec_for("ff_lstm", depth=7), clip_norm=2.5)
        assert cfg.resolved_clip_norm() == 2.5
        assert TrainConfig(model=spec_for("ff_lstm", depth=7), clip_norm=0).resolved_clip_norm() is None

    def test_bad_config_values(self):
        with pytest.raises(ConfigurationError):
            TrainConfig(model=spec_for("video_level"), learning_rate=0.0)
        with pytest.raises(ConfigurationError):
            TrainConfig(model=spec_for("video_level"), epochs=0)


@pytest.fixture(scope="module")
def trained(dataset, tmp_path_factory):
    tmp = tmp_path_factory.mktemp("pred")
    ckpt = str(tmp / "m.ckpt")
    config = TrainConfig(
        model=spec_for("temporal_resnet"),
        learning_rate=5e-3,
        batch_size=8,
        epochs=2,
        seed=4,
        train_data=dataset,
        checkpoint_path=ckpt,
    )
    train(config)
    return ckpt, tmp


class TestPredict:
    def test_repeated_predictions_identical(self, dataset, trained):
        ckpt, tmp = trained
        p1, p2 = str(tmp / "p1.txt"), str(tmp / "p2.txt")
        predict(ckpt, dataset, p1)
        predict(ckpt, dataset, p2)
        assert open(p1, "rb").read() == open(p2, "rb").read()

    def test_format_contract(self, dataset, trained):
        ckpt, tmp = trained
        path = str(tmp / "fmt.txt")
        predict(ckpt, dataset, path)
        for vid, items in read_prediction_file(path):
            assert len(items) <= 20
            scores = [s for _, s in items]
            assert scores == sorted(scores, reverse=True)

    def test_batch_partitioning_does_not_change_output(self, dataset, trained):
        ckpt, tmp = trained
        p1, p8 = str(tmp / "b1.txt"), str(tmp / "b8.txt")
        predict(ckpt, dataset, p1, batch_size=1)
        predict(ckpt, dataset, p8, batch_size=8)
        a = dict(read_prediction_file(p1))
        b = dict(read_prediction_file(p8))
        assert a.keys() == b.keys()
        for vid in a:
            for (ca, sa), (cb, sb) in zip(a[vid], b[vid]):
                assert ca == cb
                assert abs(sa - sb) < 1e-9


class TestEvaluate:
    def test_perfect_predictions_give_one(self, dataset, tmp_path):
        from videoseq import load_records

        _, records = load_records(dataset)
        preds = [
            (r.id, [(c, 1.0 - 0.01 * i) for i, c in enumerate(r.labels)])
            for r in records
        ]
        path = tmp_path / "perfect.txt"
        write_prediction_file(path, preds)
        assert evaluate(str(path), dataset).gap == 1.0

    def test_unknown_video_rejected(self, dataset, tmp_path):
        path = tmp_path / "ghost.txt"
        write_prediction_file(path, [("who_is_this", [(0, 0.5)])])
        with pytest.raises(InputError):
            evaluate(str(path), dataset)

    def test_random_scores_land_near_positive_rate(self, tmp_path):
        from videoseq import load_records

        data = tmp_path / "big.bin"
        generate_synthetic(data, 25, 400, seed=9, noise_sigma=0.2,
                           visual_dim=4, audio_dim=2, max_frames=2)
        _, records = load_records(data)
        rng = np.random.default_rng(10)
        preds = []
        for r in records:
            scores = rng.random(25)
            order = np.argsort(-scores)[:20]
            preds.append((r.id, [(int(c), float(scores[c])) for c in order]))
        path = tmp_path / "rand.txt"
        write_prediction_file(path, preds)
        result = evaluate(str(path), str(data))
        positive_rate = np.mean([len(r.labels) for r in records]) / 25
        assert result.gap < 0.5
        assert abs(result.gap - positive_rate) < 0.1

    def test_agrees_with_oracle(self, dataset, tmp_path):
        from videoseq import load_records

        _, records = load_records(dataset)
        rng = np.random.default_rng(12)
        preds = []
        for r in records:
            scores = rng.random(6)
            order = np.argsort(-scores)
            preds.append((r.id, [(int(c), float(round(scores[c], 6))) for c in order]))
        path = tmp_path / "p.txt"
        write_prediction_file(path, preds)
        got = evaluate(str(path), dataset)
        labels = {r.id: frozenset(r.labels) for r in records}
        expected = gap_oracle(PredictionSet(read_prediction_file(path), labels), k=20)
        assert got == expected


class TestEnsemble:
    def _write(self, path, rows):
        write_prediction_file(path, rows)
        return str(path)

    def test_single_file_identity(self, tmp_path):
        rows = [("a", [(0, 0.9), (1, 0.2)]), ("b", [(1, 0.8), (0, 0.3)])]
        src = self._write(tmp_path / "one.txt", rows)
        out = str(tmp_path / "out.txt")
        ensemble_average([src], out)
        assert open(src, "rb").read() == open(out, "rb").read()

    def test_two_identical_files_idempotent(self, tmp_path):
        rows = [("a", [(0, 0.9), (1, 0.2)]), ("b", [(1, 0.8), (0, 0.3)])]
        src = self._write(tmp_path / "one.txt", rows)
        out = str(tmp_path / "out.txt")
        ensemble_average([src, src], out)
        assert open(src, "rb").read() == open(out, "rb").read()

    def test_first_weight_only_reproduces_first_file(self, tmp_path):
        rows_a = [("a", [(0, 0.9), (1, 0.2)])]
        rows_b = [("a", [(1, 0.7), (0, 0.1)])]
        src_a = self._write(tmp_path / "a.txt", rows_a)
        src_b = self._write(tmp_path / "b.txt", rows_b)
        out = str(tmp_path / "out.txt")
        ensemble_average([src_a, src_b], out, weights=[1.0, 0.0])
        assert open(src_a, "rb").read() == open(out, "rb").read()

    def test_complementary_models_improve(self, tmp_path):
        # model A nails video 1, model B nails video 2; the mean ranks both
        labels = {"v1": frozenset({0}), "v2": frozenset({1})}
        rows_a = [("v1", [(0, 0.9), (1, 0.1)]), ("v2", [(0, 0.6), (1, 0.4)])]
        rows_b = [("v1", [(0, 0.4), (1, 0.6)]), ("v2", [(0, 0.1), (1, 0.9)])]
        src_a = self._write(tmp_path / "a.txt", rows_a)
        src_b = self._write(tmp_path / "b.txt", rows_b)
        out = str(tmp_path / "mean.txt")
        ensemble_average([src_a, src_b], out)

        def gap_of(rows):
            return gap_oracle(PredictionSet(rows, labels), k=2).gap

        merged = read_prediction_file(out)
        assert gap_of(merged) >= max(gap_of(rows_a), gap_of(rows_b))

    def test_video_set_mismatch_lists_difference(self, tmp_path):
        src_a = self._write(tmp_path / "a.txt", [("a", [(0, 0.9)])])
        src_b = self._write(tmp_path / "b.txt", [("b", [(0, 0.9)])])
        with pytest.raises(InputError, match="'a'"):
            ensemble_average([src_a, src_b], str(tmp_path / "out.txt"))

    def test_empty_input_list_rejected(self, tmp_path):
        with pytest.raises(InputError):
            ensemble_average([], str(tmp_path / "out.txt"))
