"""Model-level gradient verification against central finite differences."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, TimeMask, backward, numerical_gradient, relative_error
from .models import ModelSpec, build_model
from .training import bce_loss

FD_STEP = 1e-4
# refinement ladder for coordinates whose difference interval straddles a
# ReLU kink: a genuine gradient bug stays wrong as the step shrinks, while
# a kink straddle converges to the analytic value
FD_REFINE_STEPS = (1e-5, 1e-6)


@dataclass
class BlockReport:
    name: str
    worst_error: float
    passed: bool


@dataclass
class GradCheckReport:
    blocks: list
    tolerance: float

    @property
    def passed(self) -> bool:
        return all(b.passed for b in self.blocks)

    @property
    def worst(self) -> float:
        return max(b.worst_error for b in self.blocks)

    def lines(self):
        for b in self.blocks:
            yield f"{b.name}\t{b.worst_error:.3e}\t{'ok' if b.passed else 'FAIL'}"


def toy_spec(kind: str, seed: int = 0) -> ModelSpec:
    """A spec small enough for finite differencing in seconds."""
    depth = 3 if kind in ("ff_lstm", "ff_gru", "stacked_lstm") else 1
    return ModelSpec(
        kind=kind,
        vocab_size=5,
        visual_dim=9,
        audio_dim=4,
        hidden_size=6,
        depth=depth,
        trb_count=2,
        trb_filters=8,
        fc_sizes=(8, 5),
        vlad_clusters=4,
        seed=seed,
    )


def grad_check(
    spec: ModelSpec,
    sample_count: int = 6,
    tolerance: float = 1e-4,
    seed: int = 0,
    batch: int = 2,
    time: int = 4,
) -> GradCheckReport:
    """Check analytic gradients of every parameter block of a model.

    Builds the model at the spec's dimensions, runs a train-mode forward on
    a fixed random batch with a binary cross-entropy loss, and compares the
    analytic gradient of ``sample_count`` coordinates per block (capped by
    block size) with central differences of step 1e-4. Failures are
    reported, never raised.
    """
    rng = np.random.default_rng(seed)
    model = build_model(spec)
    if spec.kind == "vlad_mlp":
        model.codebook.centers[...] = rng.normal(size=model.codebook.centers.shape)
    visual = Tensor(rng.normal(size=(batch, spec.visual_dim, time)))
    audio = Tensor(rng.normal(size=(batch, spec.audio_dim, time)))
    lengths = rng.integers(1, time + 1, size=batch)
    lengths[0] = time
    mask = TimeMask(batch, time, lengths)
    targets = (rng.random(size=(batch, spec.vocab_size)) < 0.4).astype(np.float64)

    def loss_fn():
        out = model.forward(visual, audio, mask, train=True)
        return bce_loss(out.probabilities, targets)

    model.zero_grad()
    backward(loss_fn())
    analytic = {
        name: (p.grad.copy() if p.grad is not None else np.zeros(p.data.shape))
        for name, p in model.named_parameters()
    }
    blocks = []
    for name, p in model.named_parameters():
        n = p.data.size
        if sample_count >= n:
            idx = np.arange(n)
        else:
            idx = rng.choice(n, size=sample_count, replace=False)
        numeric = numerical_gradient(lambda: loss_fn().data, p, step=FD_STEP, indices=idx)
        a = analytic[name].reshape(-1)
        m = numeric.reshape(-1)
        errors = {int(i): relative_error(a[i], m[i]) for i in idx}
        for i, err in errors.items():
            for step in FD_REFINE_STEPS:
                if err < tolerance:
                    break
                refined = numerical_gradient(
                    lambda: loss_fn().data, p, step=step, indices=[i]
                ).reshape(-1)[i]
                err = min(err, relative_error(a[i], refined))
            errors[i] = err
        worst = max(errors.values())
        blocks.append(BlockReport(name, worst, worst < tolerance))
    return GradCheckReport(blocks, tolerance)
