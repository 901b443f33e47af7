"""Global average precision at top K, and the prediction interchange file.

GAP pools every video's top-K (score, is-positive) pairs into one list,
sorts it by score with a deterministic tie-break (ascending video order,
then ascending class index), and averages precision at each hit over the
total number of ground-truth positives.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import ConfigurationError, FormatError, PreconditionError

TOP_K = 20


@dataclass
class PredictionSet:
    """Per-video ranked (class, score) lists plus ground-truth label sets.

    ``predictions`` keeps file/insertion order: [(video_id, [(class, score),
    ...])] with scores descending. ``labels`` maps video id to its positive
    class set; it may be attached later than the predictions.
    """

    predictions: list
    labels: dict | None = None


@dataclass
class GapResult:
    gap: float
    pooled_pairs: int
    total_positives: int


def _pooled_pairs(preds: PredictionSet, k: int):
    """All (score, video_order, class, is_positive) tuples, top-k per video."""
    if preds.labels is None:
        raise PreconditionError("prediction set has no ground-truth labels attached")
    pooled = []
    total_positives = 0
    for video_order, (video_id, items) in enumerate(preds.predictions):
        if video_id not in preds.labels:
            raise PreconditionError(f"video {video_id!r} has no ground truth")
        positives = preds.labels[video_id]
        total_positives += len(positives)
        ranked = sorted(items, key=lambda cs: (-cs[1], cs[0]))[:k]
        seen = set()
        for cls, score in ranked:
            if cls in seen:
                raise PreconditionError(
                    f"video {video_id!r} predicts class {cls} more than once"
                )
            if not np.isfinite(score):
                raise PreconditionError(
                    f"video {video_id!r} has a non-finite score for class {cls}"
                )
            seen.add(cls)
            pooled.append((score, video_order, cls, cls in positives))
    pooled.sort(key=lambda p: (-p[0], p[1], p[2]))
    return pooled, total_positives


def gap_at_k(preds: PredictionSet, k: int = TOP_K) -> GapResult:
    """Streaming computation with an incremental hit counter."""
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    pooled, total_positives = _pooled_pairs(preds, k)
    if total_positives == 0:
        return GapResult(0.0, len(pooled), 0)
    hits = 0
    ap_sum = 0.0
    for rank, (_, _, _, is_positive) in enumerate(pooled, start=1):
        if is_positive:
            hits += 1
            ap_sum += hits / rank
    return GapResult(ap_sum / total_positives, len(pooled), total_positives)


def gap_oracle(preds: PredictionSet, k: int = TOP_K) -> GapResult:
    """Naive reference: recounts hits from scratch at every position.

    Test-only; limited to small instances.
    """
    if k < 1:
        raise ConfigurationError(f"k must be >= 1, got {k}")
    if len(preds.predictions) > 100:
        raise PreconditionError("oracle is limited to <= 100 videos")
    pooled, total_positives = _pooled_pairs(preds, k)
    if total_positives == 0:
        return GapResult(0.0, len(pooled), 0)
    flags = [is_positive for (_, _, _, is_positive) in pooled]
    ap_sum = 0.0
    for i, flag in enumerate(flags):
        if flag:
            ap_sum += sum(flags[: i + 1]) / (i + 1)
    return GapResult(ap_sum / total_positives, len(pooled), total_positives)


def topk_predictions(probabilities, k: int, video_ids) -> PredictionSet:
    """Top-k classes per video by probability, ties to the lower class index."""
    probs = np.asarray(getattr(probabilities, "data", probabilities), dtype=np.float64)
    if probs.ndim != 2:
        raise ConfigurationError(f"probabilities must be 2-D, got shape {probs.shape}")
    vocab = probs.shape[1]
    if k > vocab:
        raise ConfigurationError(f"k={k} exceeds vocab size {vocab}")
    video_ids = list(video_ids)
    if len(video_ids) != probs.shape[0]:
        raise ConfigurationError(
            f"{len(video_ids)} video ids for {probs.shape[0]} probability rows"
        )
    predictions = []
    classes = np.arange(vocab)
    for vid, row in zip(video_ids, probs):
        order = np.lexsort((classes, -row))[:k]
        predictions.append((vid, [(int(c), float(row[c])) for c in order]))
    return PredictionSet(predictions)


# ---------------------------------------------------------------------------
# prediction file: one line per video, `video_id class:score ...`
# ---------------------------------------------------------------------------


def write_prediction_file(path: str, predictions) -> None:
    """Scores are serialized with 6 decimal digits."""
    with open(path, "w", encoding="utf-8") as f:
        for video_id, items in predictions:
            pairs = " ".join(f"{cls}:{score:.6f}" for cls, score in items)
            f.write(f"{video_id} {pairs}\n" if pairs else f"{video_id}\n")


def read_prediction_file(path: str):
    predictions = []
    with open(path, "r", encoding="utf-8") as f:
        for line_no, line in enumerate(f, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            video_id, raw_pairs = parts[0], parts[1:]
            items = []
            for pair in raw_pairs:
                try:
                    cls_str, score_str = pair.split(":")
                    items.append((int(cls_str), float(score_str)))
                except ValueError:
                    raise FormatError(
                        f"{path}:{line_no}: malformed class:score pair {pair!r}"
                    ) from None
            predictions.append((video_id, items))
    return predictions
