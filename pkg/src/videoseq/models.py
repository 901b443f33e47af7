"""The classifier architectures, assembled from the autodiff primitives.

Seven trainable kinds plus a naive deep stack used for side-by-side
comparisons:

- ``video_level``: masked mean over frames -> MLP head
- ``vlad_mlp``: VLAD encoding against a fitted codebook -> MLP head
- ``two_stream_lstm`` / ``two_stream_gru``: one bidirectional encoder with
  attention pooling per modality, fused by concatenation
- ``ff_lstm`` / ``ff_gru``: deep bidirectional stacks where each layer's
  output is embedded together with the previous embedding through a
  per-step fully-connected fast-forward connection
- ``temporal_resnet``: residual temporal convolution blocks feeding a
  bidirectional LSTM with attention
- ``stacked_lstm``: plain deep bidirectional LSTM stack, no fast-forward
  connections

Every model ends in a per-class sigmoid and masks its raw inputs up front,
so values stored at padded frame positions can never influence the output.
All parameters are drawn deterministically from the spec seed.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import BatchNormState, Tensor, TimeMask
from .errors import ConfigurationError, CorruptionError, DimensionError, FormatError
from .recurrent import AttentionParams, RecurrentCellParams, attention_pool, run_bidirectional
from .vlad import Codebook, vlad_encode

MODEL_KINDS = (
    "video_level",
    "vlad_mlp",
    "two_stream_lstm",
    "two_stream_gru",
    "ff_lstm",
    "ff_gru",
    "temporal_resnet",
    "stacked_lstm",
)


@dataclass
class ModelSpec:
    """Declarative description of one classifier; irrelevant fields are ignored."""

    kind: str
    vocab_size: int
    visual_dim: int = 1024
    audio_dim: int = 128
    hidden_size: int = 64
    depth: int = 1
    trb_count: int = 9
    trb_filters: int = 1024
    fc_sizes: tuple | None = None
    vlad_clusters: int = 256
    seed: int = 0

    def __post_init__(self):
        if self.kind not in MODEL_KINDS:
            raise ConfigurationError(
                f"unknown model kind {self.kind!r}; expected one of {MODEL_KINDS}"
            )
        if self.vocab_size < 1:
            raise ConfigurationError("vocab_size must be >= 1")
        if self.depth < 1:
            raise ConfigurationError("depth must be >= 1")
        if self.trb_count < 1:
            raise ConfigurationError("trb_count must be >= 1")
        if self.fc_sizes is None:
            self.fc_sizes = (512, self.vocab_size)
        else:
            self.fc_sizes = tuple(int(s) for s in self.fc_sizes)
            if len(self.fc_sizes) != 2:
                raise ConfigurationError("fc_sizes must hold exactly two layer widths")
            if self.fc_sizes[1] != self.vocab_size:
                raise ConfigurationError(
                    f"final head width {self.fc_sizes[1]} must equal vocab_size "
                    f"{self.vocab_size}"
                )

    @property
    def feature_dim(self) -> int:
        return self.visual_dim + self.audio_dim


@dataclass
class ModelOutput:
    probabilities: Tensor  # [batch x vocab], every value strictly in (0, 1)


class MlpHead:
    """Two fully-connected layers with a ReLU between and a sigmoid on top."""

    def __init__(self, input_dim: int, fc_sizes: tuple, rng: np.random.Generator):
        hidden, out = fc_sizes
        s1 = 1.0 / np.sqrt(input_dim)
        s2 = 1.0 / np.sqrt(hidden)
        self.w1 = Tensor(rng.uniform(-s1, s1, size=(hidden, input_dim)), requires_grad=True)
        self.b1 = Tensor(np.zeros(hidden), requires_grad=True)
        self.w2 = Tensor(rng.uniform(-s2, s2, size=(out, hidden)), requires_grad=True)
        self.b2 = Tensor(np.zeros(out), requires_grad=True)

    def parameters(self, prefix: str):
        yield f"{prefix}.w1", self.w1
        yield f"{prefix}.b1", self.b1
        yield f"{prefix}.w2", self.w2
        yield f"{prefix}.b2", self.b2

    def forward(self, x: Tensor) -> Tensor:
        if x.shape[1] != self.w1.shape[1]:
            raise DimensionError(
                f"head expects {self.w1.shape[1]} input features, got {x.shape}"
            )
        h = ad.relu(ad.matmul(x, ad.transpose(self.w1)) + self.b1)
        return ad.sigmoid(ad.matmul(h, ad.transpose(self.w2)) + self.b2)


def mlp_classify(head: MlpHead, features: Tensor) -> ModelOutput:
    return ModelOutput(head.forward(features))


def _conv_params(c_out: int, c_in: int, width: int, rng: np.random.Generator):
    scale = 1.0 / np.sqrt(c_in * width)
    k = Tensor(rng.uniform(-scale, scale, size=(c_out, c_in, width)), requires_grad=True)
    b = Tensor(np.zeros(c_out), requires_grad=True)
    return k, b


class _Model:
    """Common plumbing: parameter registry, input checks, forward dispatch."""

    def __init__(self, spec: ModelSpec):
        self.spec = spec
        self._params: list = []

    def _register(self, named):
        for name, tensor in named:
            self._params.append((name, tensor))

    def named_parameters(self):
        return list(self._params)

    def parameters(self):
        return [t for _, t in self._params]

    def zero_grad(self):
        for _, t in self._params:
            t.zero_grad()

    def _extra_state(self):
        """Non-trainable arrays the predict path needs (overridden as needed)."""
        return []

    def _load_extra_state(self, arrays: dict):
        if arrays:
            raise FormatError(f"unexpected state arrays in checkpoint: {sorted(arrays)}")

    def _check_inputs(self, visual: Tensor, audio: Tensor, mask: TimeMask):
        spec = self.spec
        if visual.ndim != 3 or visual.shape[1] != spec.visual_dim:
            raise DimensionError(
                f"visual input {visual.shape} does not match visual_dim {spec.visual_dim}"
            )
        if audio.ndim != 3 or audio.shape[1] != spec.audio_dim:
            raise DimensionError(
                f"audio input {audio.shape} does not match audio_dim {spec.audio_dim}"
            )
        if visual.shape[0] != audio.shape[0] or visual.shape[2] != audio.shape[2]:
            raise DimensionError(
                f"visual {visual.shape} and audio {audio.shape} batches do not align"
            )
        if visual.shape[0] != mask.batch or visual.shape[2] != mask.max_time:
            raise DimensionError(
                f"inputs {visual.shape} do not match mask (batch {mask.batch}, "
                f"time {mask.max_time})"
            )

    def forward(self, visual: Tensor, audio: Tensor, mask: TimeMask, train: bool = False) -> ModelOutput:
        raise NotImplementedError


def _masked_features(visual: Tensor, audio: Tensor, mask: TimeMask) -> Tensor:
    m = mask.channel_mask()
    return ad.concat_channels([visual * m, audio * m])


class VideoLevelModel(_Model):
    """Frame-mean pooling followed by the MLP classifier."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        rng = np.random.default_rng(spec.seed)
        self.head = MlpHead(spec.feature_dim, spec.fc_sizes, rng)
        self._register(self.head.parameters("head"))

    def forward(self, visual, audio, mask, train=False):
        self._check_inputs(visual, audio, mask)
        pooled = ad.masked_mean_time(_masked_features(visual, audio, mask), mask)
        return mlp_classify(self.head, pooled)


class VladMlpModel(_Model):
    """VLAD encoding of each video's valid frames, classified by an MLP.

    The codebook is fitted outside the gradient loop (k-means on training
    frames) and rides along in checkpoints as non-trainable state.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        if spec.vlad_clusters < 1:
            raise ConfigurationError("vlad_clusters must be >= 1")
        rng = np.random.default_rng(spec.seed)
        self.codebook = Codebook(np.zeros((spec.vlad_clusters, spec.feature_dim)))
        self.head = MlpHead(spec.vlad_clusters * spec.feature_dim, spec.fc_sizes, rng)
        self._register(self.head.parameters("head"))

    def set_codebook(self, codebook: Codebook):
        if codebook.centers.shape != self.codebook.centers.shape:
            raise DimensionError(
                f"codebook shape {codebook.centers.shape} does not match spec "
                f"{self.codebook.centers.shape}"
            )
        self.codebook = codebook

    def encode_batch(self, visual: Tensor, audio: Tensor, mask: TimeMask) -> np.ndarray:
        """Encode each item's valid frames -> [batch x clusters*feature_dim]."""
        rows = []
        for i in range(mask.batch):
            t = int(mask.valid_lengths[i])
            frames = np.concatenate(
                [visual.data[i, :, :t].T, audio.data[i, :, :t].T], axis=1
            )
            rows.append(vlad_encode(self.codebook, frames).vector)
        return np.stack(rows)

    def forward(self, visual, audio, mask, train=False):
        self._check_inputs(visual, audio, mask)
        encodings = Tensor(self.encode_batch(visual, audio, mask))
        return mlp_classify(self.head, encodings)

    def _extra_state(self):
        return [("codebook.centers", self.codebook.centers)]

    def _load_extra_state(self, arrays):
        self.codebook = Codebook(arrays.pop("codebook.centers"))
        super()._load_extra_state(arrays)


class TwoStreamModel(_Model):
    """Independent bidirectional encoder + attention per modality, fused late."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        cell = "lstm" if spec.kind == "two_stream_lstm" else "gru"
        rng = np.random.default_rng(spec.seed)
        h = spec.hidden_size
        self.streams = {}
        for name, dim in (("visual", spec.visual_dim), ("audio", spec.audio_dim)):
            fwd = RecurrentCellParams.create(cell, dim, h, rng)
            bwd = RecurrentCellParams.create(cell, dim, h, rng)
            attn = AttentionParams.create(2 * h, h, rng)
            self.streams[name] = (fwd, bwd, attn)
            self._register(fwd.parameters(f"{name}.fwd"))
            self._register(bwd.parameters(f"{name}.bwd"))
            self._register(attn.parameters(f"{name}.attn"))
        self.head = MlpHead(4 * h, spec.fc_sizes, rng)
        self._register(self.head.parameters("head"))

    def forward(self, visual, audio, mask, train=False):
        self._check_inputs(visual, audio, mask)
        m = mask.channel_mask()
        pooled = []
        for name, x in (("visual", visual), ("audio", audio)):
            fwd, bwd, attn = self.streams[name]
            states = run_bidirectional(fwd, bwd, x * m, mask)
            pooled.append(attention_pool(attn, states, mask))
        return mlp_classify(self.head, ad.concat(pooled, axis=1))


class FastForwardModel(_Model):
    """Deep bidirectional stack with per-layer fully-connected fast paths.

    Layer i runs a bidirectional cell pair over the previous fast-forward
    embedding f_{i-1} (f_0 is the raw feature sequence), then embeds
    [f_{i-1}; h_i] back to the fast-forward width with one per-step FC and
    a ReLU. The classifier head attends over the last embedding.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        cell = "lstm" if spec.kind == "ff_lstm" else "gru"
        rng = np.random.default_rng(spec.seed)
        h = spec.hidden_size
        self.ff_width = 2 * h
        self.layers = []
        in_dim = spec.feature_dim
        for i in range(spec.depth):
            fwd = RecurrentCellParams.create(cell, in_dim, h, rng)
            bwd = RecurrentCellParams.create(cell, in_dim, h, rng)
            ff_k, ff_b = _conv_params(self.ff_width, in_dim + 2 * h, 1, rng)
            self.layers.append((fwd, bwd, ff_k, ff_b))
            self._register(fwd.parameters(f"layer{i}.fwd"))
            self._register(bwd.parameters(f"layer{i}.bwd"))
            self._register([(f"layer{i}.ff_weight", ff_k), (f"layer{i}.ff_bias", ff_b)])
            in_dim = self.ff_width
        self.attn = AttentionParams.create(self.ff_width, h, rng)
        self._register(self.attn.parameters("attn"))
        self.head = MlpHead(self.ff_width, spec.fc_sizes, rng)
        self._register(self.head.parameters("head"))

    def forward(self, visual, audio, mask, train=False):
        self._check_inputs(visual, audio, mask)
        f = _masked_features(visual, audio, mask)
        for fwd, bwd, ff_k, ff_b in self.layers:
            states = run_bidirectional(fwd, bwd, f, mask)
            f = ad.relu(ad.conv1d_same(ad.concat_channels([f, states]), ff_k, ff_b))
        pooled = attention_pool(self.attn, f, mask)
        return mlp_classify(self.head, pooled)


class StackedModel(_Model):
    """Plain deep bidirectional LSTM stack (no fast-forward connections)."""

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        rng = np.random.default_rng(spec.seed)
        h = spec.hidden_size
        self.layers = []
        in_dim = spec.feature_dim
        for i in range(spec.depth):
            fwd = RecurrentCellParams.create("lstm", in_dim, h, rng)
            bwd = RecurrentCellParams.create("lstm", in_dim, h, rng)
            self.layers.append((fwd, bwd))
            self._register(fwd.parameters(f"layer{i}.fwd"))
            self._register(bwd.parameters(f"layer{i}.bwd"))
            in_dim = 2 * h
        self.attn = AttentionParams.create(2 * h, h, rng)
        self._register(self.attn.parameters("attn"))
        self.head = MlpHead(2 * h, spec.fc_sizes, rng)
        self._register(self.head.parameters("head"))

    def forward(self, visual, audio, mask, train=False):
        self._check_inputs(visual, audio, mask)
        x = _masked_features(visual, audio, mask)
        for fwd, bwd in self.layers:
            x = run_bidirectional(fwd, bwd, x, mask)
        pooled = attention_pool(self.attn, x, mask)
        return mlp_classify(self.head, pooled)


class TemporalResnetModel(_Model):
    """Stack of temporal residual blocks, then a bidirectional LSTM head.

    Each block is conv3 -> BN -> ReLU -> conv3 -> BN, an additive shortcut,
    and a final ReLU; outputs are re-masked to zero at padded frames after
    the width-1 projection and after every block.
    """

    def __init__(self, spec: ModelSpec):
        super().__init__(spec)
        if spec.trb_filters < 1:
            raise ConfigurationError("trb_filters must be >= 1")
        rng = np.random.default_rng(spec.seed)
        filters = spec.trb_filters
        self.proj_k, self.proj_b = _conv_params(filters, spec.feature_dim, 1, rng)
        self._register([("proj.weight", self.proj_k), ("proj.bias", self.proj_b)])
        self.blocks = []
        self.bn_states = []
        for i in range(spec.trb_count):
            block = {}
            for j in (1, 2):
                k, b = _conv_params(filters, filters, 3, rng)
                gamma = Tensor(np.ones(filters), requires_grad=True)
                beta = Tensor(np.zeros(filters), requires_grad=True)
                state = BatchNormState.for_channels(filters)
                block[j] = (k, b, gamma, beta, state)
                self._register(
                    [
                        (f"block{i}.conv{j}.weight", k),
                        (f"block{i}.conv{j}.bias", b),
                        (f"block{i}.bn{j}.gamma", gamma),
                        (f"block{i}.bn{j}.beta", beta),
                    ]
                )
                self.bn_states.append((f"block{i}.bn{j}", state))
            self.blocks.append(block)
        h = spec.hidden_size
        self.lstm_fwd = RecurrentCellParams.create("lstm", filters, h, rng)
        self.lstm_bwd = RecurrentCellParams.create("lstm", filters, h, rng)
        self._register(self.lstm_fwd.parameters("lstm.fwd"))
        self._register(self.lstm_bwd.parameters("lstm.bwd"))
        self.attn = AttentionParams.create(2 * h, h, rng)
        self._register(self.attn.parameters("attn"))
        self.head = MlpHead(2 * h, spec.fc_sizes, rng)
        self._register(self.head.parameters("head"))

    def forward(self, visual, audio, mask, train=False):
        self._check_inputs(visual, audio, mask)
        mode = "train" if train else "eval"
        m = mask.channel_mask()
        x = ad.conv1d_same(_masked_features(visual, audio, mask), self.proj_k, self.proj_b) * m
        for block in self.blocks:
            k1, b1, g1, be1, s1 = block[1]
            k2, b2, g2, be2, s2 = block[2]
            y = ad.relu(ad.batchnorm_time(ad.conv1d_same(x, k1, b1), mask, g1, be1, mode, s1))
            y = ad.batchnorm_time(ad.conv1d_same(y, k2, b2), mask, g2, be2, mode, s2)
            x = ad.relu(x + y) * m
        states = run_bidirectional(self.lstm_fwd, self.lstm_bwd, x, mask)
        pooled = attention_pool(self.attn, states, mask)
        return mlp_classify(self.head, pooled)

    def _extra_state(self):
        out = []
        for name, state in self.bn_states:
            out.append((f"{name}.running_mean", state.running_mean))
            out.append((f"{name}.running_var", state.running_var))
            out.append((f"{name}.initialized", np.array([1.0 if state.initialized else 0.0])))
        return out

    def _load_extra_state(self, arrays):
        for name, state in self.bn_states:
            state.running_mean = arrays.pop(f"{name}.running_mean")
            state.running_var = arrays.pop(f"{name}.running_var")
            state.initialized = bool(arrays.pop(f"{name}.initialized")[0])
        super()._load_extra_state(arrays)


_BUILDERS = {
    "video_level": VideoLevelModel,
    "vlad_mlp": VladMlpModel,
    "two_stream_lstm": TwoStreamModel,
    "two_stream_gru": TwoStreamModel,
    "ff_lstm": FastForwardModel,
    "ff_gru": FastForwardModel,
    "temporal_resnet": TemporalResnetModel,
    "stacked_lstm": StackedModel,
}


def build_model(spec: ModelSpec) -> _Model:
    return _BUILDERS[spec.kind](spec)


# ---------------------------------------------------------------------------
# checkpoint file format
# ---------------------------------------------------------------------------

_CKPT_MAGIC = b"FLCK"
_CKPT_VERSION = 1


def _spec_to_bytes(spec: ModelSpec) -> bytes:
    kind = spec.kind.encode("utf-8")
    parts = [struct.pack("<H", len(kind)), kind]
    parts.append(
        struct.pack(
            "<10Iq",
            spec.vocab_size,
            spec.visual_dim,
            spec.audio_dim,
            spec.hidden_size,
            spec.depth,
            spec.trb_count,
            spec.trb_filters,
            spec.fc_sizes[0],
            spec.fc_sizes[1],
            spec.vlad_clusters,
            spec.seed,
        )
    )
    return b"".join(parts)


def _read_exact(f, n: int, what: str) -> bytes:
    data = f.read(n)
    if len(data) != n:
        raise CorruptionError(
            f"checkpoint truncated at byte {f.tell() - len(data)} while reading {what}"
        )
    return data


def _spec_from_stream(f) -> ModelSpec:
    (kind_len,) = struct.unpack("<H", _read_exact(f, 2, "spec kind length"))
    kind = _read_exact(f, kind_len, "spec kind").decode("utf-8")
    vals = struct.unpack("<10Iq", _read_exact(f, 48, "spec fields"))
    return ModelSpec(
        kind=kind,
        vocab_size=vals[0],
        visual_dim=vals[1],
        audio_dim=vals[2],
        hidden_size=vals[3],
        depth=vals[4],
        trb_count=vals[5],
        trb_filters=vals[6],
        fc_sizes=(vals[7], vals[8]),
        vlad_clusters=vals[9],
        seed=vals[10],
    )


def _named_arrays(model: _Model):
    for name, tensor in model.named_parameters():
        yield name, tensor.data
    for name, arr in model._extra_state():
        yield name, np.asarray(arr, dtype=np.float64)


def save_checkpoint(path: str, model: _Model) -> None:
    """Flat binary: spec, then every named array in declaration order."""
    entries = list(_named_arrays(model))
    with open(path, "wb") as f:
        f.write(_CKPT_MAGIC)
        f.write(struct.pack("<I", _CKPT_VERSION))
        f.write(_spec_to_bytes(model.spec))
        f.write(struct.pack("<I", len(entries)))
        for name, arr in entries:
            encoded = name.encode("utf-8")
            f.write(struct.pack("<H", len(encoded)))
            f.write(encoded)
            f.write(struct.pack("<B", arr.ndim))
            f.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            f.write(arr.astype("<f8", copy=False).tobytes())


def load_checkpoint(path: str) -> _Model:
    with open(path, "rb") as f:
        if f.read(4) != _CKPT_MAGIC:
            raise FormatError(f"{path}: not a checkpoint file (bad magic)")
        (version,) = struct.unpack("<I", _read_exact(f, 4, "version"))
        if version != _CKPT_VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {version}")
        spec = _spec_from_stream(f)
        model = build_model(spec)
        (count,) = struct.unpack("<I", _read_exact(f, 4, "tensor count"))
        arrays = {}
        for _ in range(count):
            (name_len,) = struct.unpack("<H", _read_exact(f, 2, "tensor name length"))
            name = _read_exact(f, name_len, "tensor name").decode("utf-8")
            (ndim,) = struct.unpack("<B", _read_exact(f, 1, "tensor rank"))
            shape = struct.unpack(f"<{ndim}I", _read_exact(f, 4 * ndim, "tensor shape"))
            n = int(np.prod(shape)) if ndim else 1
            raw = _read_exact(f, 8 * n, f"tensor {name!r} data")
            arrays[name] = np.frombuffer(raw, dtype="<f8").reshape(shape).copy()
    for name, tensor in model.named_parameters():
        if name not in arrays:
            raise FormatError(f"{path}: checkpoint is missing parameter {name!r}")
        stored = arrays.pop(name)
        if stored.shape != tensor.data.shape:
            raise FormatError(
                f"{path}: parameter {name!r} has shape {stored.shape}, expected "
                f"{tensor.data.shape}"
            )
        tensor.data = stored
    model._load_extra_state(arrays)
    return model
