"""Training loop, loss, optimizer, prediction, ensembling, evaluation.

Everything is deterministic given the config seed: batch order, parameter
init, and the synthetic data are all driven by seeded generators, so two
identical runs produce byte-identical prediction files and metric logs.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor, no_grad
from .dataio import DatasetHeader, load_records, pad_batch
from .errors import (
    ConfigurationError,
    DimensionError,
    InputError,
    PreconditionError,
    TrainingError,
)
from .metrics import (
    GapResult,
    PredictionSet,
    gap_at_k,
    read_prediction_file,
    topk_predictions,
    write_prediction_file,
)
from .models import ModelSpec, build_model, load_checkpoint, mlp_classify, save_checkpoint
from .vlad import kmeans_fit

CODEBOOK_SAMPLE_CAP = 100_000
DEEP_STACK_CLIP_NORM = 5.0
_RECURRENT_STACK_KINDS = ("ff_lstm", "ff_gru", "stacked_lstm")


@dataclass
class TrainConfig:
    model: ModelSpec
    learning_rate: float = 1e-3
    batch_size: int = 32
    epochs: int = 10
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8
    clip_norm: float | None = None  # None -> depth rule below; 0 disables
    seed: int = 0
    train_data: str = ""
    val_data: str | None = None
    checkpoint_path: str = ""
    log_path: str | None = None

    def __post_init__(self):
        if self.learning_rate <= 0:
            raise ConfigurationError("learning_rate must be > 0")
        if self.batch_size < 1:
            raise ConfigurationError("batch_size must be >= 1")
        if self.epochs < 1:
            raise ConfigurationError("epochs must be >= 1")

    def resolved_clip_norm(self) -> float | None:
        """Deep recurrent stacks get a default global-norm clip of 5.0."""
        if self.clip_norm is None:
            if self.model.kind in _RECURRENT_STACK_KINDS and self.model.depth >= 4:
                return DEEP_STACK_CLIP_NORM
            return None
        return self.clip_norm if self.clip_norm > 0 else None


def bce_loss(probabilities: Tensor, targets) -> Tensor:
    """Mean binary cross-entropy over batch and classes, probs clamped
    to [1e-7, 1 - 1e-7]."""
    y = targets.data if isinstance(targets, Tensor) else np.asarray(targets, dtype=np.float64)
    if probabilities.shape != y.shape:
        raise DimensionError(
            f"probabilities {probabilities.shape} and targets {y.shape} disagree"
        )
    if not np.all((y == 0.0) | (y == 1.0)):
        raise PreconditionError("targets must be multi-hot (0/1)")
    p = ad.clip(probabilities, 1e-7, 1.0 - 1e-7)
    loss = ad.log(p) * y + ad.log(1.0 - p) * (1.0 - y)
    return -loss.mean()


@dataclass
class OptimizerState:
    """Adam moment buffers, one pair per parameter block, plus step counter."""

    moments1: dict = field(default_factory=dict)
    moments2: dict = field(default_factory=dict)
    step_count: int = 0


class Adam:
    def __init__(
        self,
        named_params,
        learning_rate: float,
        beta1: float = 0.9,
        beta2: float = 0.999,
        epsilon: float = 1e-8,
        clip_norm: float | None = None,
    ):
        self.named_params = list(named_params)
        self.lr = learning_rate
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.clip_norm = clip_norm
        self.state = OptimizerState()
        for name, p in self.named_params:
            self.state.moments1[name] = np.zeros(p.data.shape)
            self.state.moments2[name] = np.zeros(p.data.shape)

    def zero_grad(self):
        for _, p in self.named_params:
            p.zero_grad()

    def step(self) -> float:
        """One bias-corrected Adam update; returns the pre-clip gradient norm."""
        grads = {}
        for name, p in self.named_params:
            g = p.grad if p.grad is not None else np.zeros(p.data.shape)
            if not np.all(np.isfinite(g)):
                raise TrainingError(f"non-finite gradient in parameter block {name!r}")
            grads[name] = g
        norm = float(np.sqrt(sum(float((g * g).sum()) for g in grads.values())))
        if self.clip_norm is not None and norm > self.clip_norm:
            scale = self.clip_norm / norm
            grads = {name: g * scale for name, g in grads.items()}
        s = self.state
        s.step_count += 1
        bc1 = 1.0 - self.beta1 ** s.step_count
        bc2 = 1.0 - self.beta2 ** s.step_count
        for name, p in self.named_params:
            g = grads[name]
            m = s.moments1[name]
            v = s.moments2[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * (g * g)
            p.data -= self.lr * (m / bc1) / (np.sqrt(v / bc2) + self.epsilon)
        return norm


def _check_data_matches_spec(header: DatasetHeader, spec: ModelSpec, path: str):
    problems = []
    if header.vocab_size != spec.vocab_size:
        problems.append(f"vocab {header.vocab_size} vs {spec.vocab_size}")
    if header.visual_dim != spec.visual_dim:
        problems.append(f"visual_dim {header.visual_dim} vs {spec.visual_dim}")
    if header.audio_dim != spec.audio_dim:
        problems.append(f"audio_dim {header.audio_dim} vs {spec.audio_dim}")
    if problems:
        raise ConfigurationError(
            f"{path} does not match model spec: " + "; ".join(problems)
        )


def fit_vlad_codebook(records, spec: ModelSpec, seed: int):
    """K-means over a seeded subsample of at most 100k training frames."""
    frames = np.concatenate([r.frames.astype(np.float64) for r in records], axis=0)
    if frames.shape[0] > CODEBOOK_SAMPLE_CAP:
        rng = np.random.default_rng(seed)
        idx = rng.choice(frames.shape[0], size=CODEBOOK_SAMPLE_CAP, replace=False)
        frames = frames[np.sort(idx)]
    return kmeans_fit(frames, spec.vlad_clusters, max_iter=25, seed=seed)


def _eval_gap(model, records, header, batch_size: int, k: int = 20) -> GapResult:
    preds = _predict_records(model, records, header, batch_size, k=min(k, header.vocab_size))
    labels = {r.id: frozenset(r.labels) for r in records}
    return gap_at_k(PredictionSet(preds, labels), k=k)


def _predict_records(model, records, header, batch_size: int, k: int):
    predictions = []
    with no_grad():
        for start in range(0, len(records), batch_size):
            batch = records[start : start + batch_size]
            visual, audio, mask, _ = pad_batch(batch, header)
            out = model.forward(visual, audio, mask, train=False)
            ps = topk_predictions(out.probabilities, k, [r.id for r in batch])
            predictions.extend(ps.predictions)
    return predictions


@dataclass
class TrainResult:
    log_lines: list
    epoch_losses: list
    val_gaps: list
    grad_norms: list
    best_gap: float
    best_epoch: int
    checkpoint_path: str


def train(config: TrainConfig) -> TrainResult:
    """Seeded epochs over shuffled batches; keeps the best-GAP checkpoint.

    Per epoch one metric-log line is emitted:
    ``epoch<TAB>train_loss<TAB>val_gap``.
    """
    header, records = load_records(config.train_data)
    _check_data_matches_spec(header, config.model, config.train_data)
    if config.val_data:
        val_header, val_records = load_records(config.val_data)
        _check_data_matches_spec(val_header, config.model, config.val_data)
    else:
        val_header, val_records = header, records

    model = build_model(config.model)
    vlad_encodings = None
    if config.model.kind == "vlad_mlp":
        model.set_codebook(fit_vlad_codebook(records, config.model, config.seed))
        rows = []
        for start in range(0, len(records), config.batch_size):
            batch = records[start : start + config.batch_size]
            visual, audio, mask, _ = pad_batch(batch, header)
            rows.append(model.encode_batch(visual, audio, mask))
        vlad_encodings = np.concatenate(rows, axis=0)

    optimizer = Adam(
        model.named_parameters(),
        config.learning_rate,
        config.beta1,
        config.beta2,
        config.epsilon,
        config.resolved_clip_norm(),
    )
    rng = np.random.default_rng(config.seed)
    n = len(records)
    all_targets = np.zeros((n, header.vocab_size))
    for i, r in enumerate(records):
        all_targets[i, r.labels] = 1.0

    log_lines, epoch_losses, val_gaps, grad_norms = [], [], [], []
    best_gap, best_epoch = -1.0, -1
    for epoch in range(1, config.epochs + 1):
        order = rng.permutation(n)
        total_loss, total_items = 0.0, 0
        for start in range(0, n, config.batch_size):
            idx = order[start : start + config.batch_size]
            targets = all_targets[idx]
            if vlad_encodings is not None:
                out = mlp_classify(model.head, Tensor(vlad_encodings[idx]))
            else:
                batch = [records[i] for i in idx]
                visual, audio, mask, _ = pad_batch(batch, header)
                out = model.forward(visual, audio, mask, train=True)
            loss = bce_loss(out.probabilities, targets)
            optimizer.zero_grad()
            ad.backward(loss)
            grad_norms.append(optimizer.step())
            total_loss += loss.item() * len(idx)
            total_items += len(idx)
        epoch_loss = total_loss / total_items
        gap = _eval_gap(model, val_records, val_header, config.batch_size).gap
        epoch_losses.append(epoch_loss)
        val_gaps.append(gap)
        log_lines.append(f"{epoch}\t{epoch_loss:.6f}\t{gap:.6f}")
        if gap > best_gap:
            best_gap, best_epoch = gap, epoch
            if config.checkpoint_path:
                save_checkpoint(config.checkpoint_path, model)
    if config.log_path:
        with open(config.log_path, "w", encoding="utf-8") as f:
            f.write("\n".join(log_lines) + "\n")
    return TrainResult(
        log_lines,
        epoch_losses,
        val_gaps,
        grad_norms,
        best_gap,
        best_epoch,
        config.checkpoint_path,
    )


def predict(
    checkpoint_path: str,
    data_path: str,
    out_path: str,
    k: int = 20,
    full_scores: bool = False,
    batch_size: int = 32,
):
    """Eval-mode forward over a record file; writes the prediction file.

    ``full_scores`` emits every class's probability per video (the input
    format ensembling expects) instead of the top-k truncation.
    """
    model = load_checkpoint(checkpoint_path)
    header, records = load_records(data_path)
    _check_data_matches_spec(header, model.spec, data_path)
    effective_k = header.vocab_size if full_scores else min(k, header.vocab_size)
    predictions = _predict_records(model, records, header, batch_size, effective_k)
    write_prediction_file(out_path, predictions)
    return predictions


def evaluate(prediction_path: str, data_path: str, k: int = 20) -> GapResult:
    """Join a prediction file with a record file's labels and compute GAP."""
    predictions = read_prediction_file(prediction_path)
    header, records = load_records(data_path)
    labels = {r.id: frozenset(r.labels) for r in records}
    unknown = [vid for vid, _ in predictions if vid not in labels]
    if unknown:
        raise InputError(f"predicted videos not present in data: {unknown[:10]}")
    return gap_at_k(PredictionSet(predictions, labels), k=k)


def ensemble_average(
    input_paths,
    out_path: str,
    weights=None,
    k: int = 20,
    full_scores: bool = False,
):
    """Weighted per-class mean of full-score prediction files.

    All files must cover the same video set and the same classes per video.
    The weighted mean is normalized by the weight sum, then re-truncated to
    the top-k (or kept whole with ``full_scores``).
    """
    input_paths = list(input_paths)
    if not input_paths:
        raise InputError("ensemble needs at least one input file")
    if weights is None:
        weights = [1.0] * len(input_paths)
    else:
        weights = [float(w) for w in weights]
        if len(weights) != len(input_paths):
            raise InputError(
                f"{len(weights)} weights for {len(input_paths)} input files"
            )
    wsum = sum(weights)
    if wsum <= 0:
        raise InputError("weights must sum to a positive value")
    weights = [w / wsum for w in weights]

    per_file = []
    for path in input_paths:
        parsed = read_prediction_file(path)
        per_file.append((path, parsed, {vid: dict(items) for vid, items in parsed}))

    base_path, base_parsed, base_scores = per_file[0]
    base_ids = set(base_scores)
    for path, _, scores in per_file[1:]:
        ids = set(scores)
        if ids != base_ids:
            missing = sorted(base_ids - ids)[:10]
            extra = sorted(ids - base_ids)[:10]
            raise InputError(
                f"{path} video set differs from {base_path}: missing {missing}, "
                f"extra {extra}"
            )

    predictions = []
    for vid, base_items in base_parsed:
        classes = [cls for cls, _ in base_items]
        for path, _, scores in per_file[1:]:
            if set(scores[vid]) != set(classes):
                raise InputError(
                    f"{path} predicts different classes than {base_path} for "
                    f"video {vid!r}; ensembling needs full-score files"
                )
        merged = []
        for cls in classes:
            score = sum(w * scores[vid][cls] for w, (_, _, scores) in zip(weights, per_file))
            merged.append((cls, score))
        merged.sort(key=lambda cs: (-cs[1], cs[0]))
        if not full_scores:
            merged = merged[:k]
        predictions.append((vid, merged))
    write_prediction_file(out_path, predictions)
    return predictions
