"""Frame-level record files, batch padding, and the synthetic dataset.

Binary layout (all little-endian): magic ``FLVR``, version u32, vocab_size
u32, visual_dim u32, audio_dim u32, max_frames u32, video_count u64; then
per video: id_len u16, id bytes (UTF-8), num_frames u16, num_labels u16,
labels u32 each (strictly increasing), features f32 per frame with the
visual block before the audio block. Features are stored as 32-bit floats
and promoted to 64-bit when batched for compute.
"""

from __future__ import annotations

import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .autodiff import Tensor, TimeMask
from .errors import (
    ConfigurationError,
    CorruptionError,
    FormatError,
    PreconditionError,
    ValidationError,
)

MAGIC = b"FLVR"
VERSION = 1
_HEADER_STRUCT = struct.Struct("<4sIIIIIQ")


@dataclass
class DatasetHeader:
    vocab_size: int
    visual_dim: int = 1024
    audio_dim: int = 128
    max_frames: int = 300
    video_count: int = 0
    version: int = VERSION

    @property
    def feature_dim(self) -> int:
        return self.visual_dim + self.audio_dim


@dataclass
class VideoRecord:
    id: str
    frames: np.ndarray  # [t x (visual_dim + audio_dim)] float32
    labels: list  # strictly increasing class indices

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float32)
        self.labels = [int(x) for x in self.labels]


def _validate_record(record: VideoRecord, header: DatasetHeader) -> None:
    t = record.frames.shape[0]
    if record.frames.ndim != 2 or record.frames.shape[1] != header.feature_dim:
        raise ValidationError(
            f"record {record.id!r}: frames shape {record.frames.shape} does not "
            f"match feature dim {header.feature_dim}"
        )
    if not 1 <= t <= header.max_frames:
        raise ValidationError(
            f"record {record.id!r}: {t} frames outside [1, {header.max_frames}]"
        )
    if t > 0xFFFF or len(record.labels) > 0xFFFF:
        raise ValidationError(f"record {record.id!r}: counts exceed the u16 range")
    if any(b <= a for a, b in zip(record.labels, record.labels[1:])):
        raise ValidationError(f"record {record.id!r}: labels must be strictly increasing")
    if record.labels and not (0 <= record.labels[0] and record.labels[-1] < header.vocab_size):
        raise ValidationError(
            f"record {record.id!r}: labels must lie in [0, {header.vocab_size})"
        )
    if len(record.id.encode("utf-8")) > 0xFFFF:
        raise ValidationError(f"record id too long ({len(record.id)} chars)")
    if not np.all(np.isfinite(record.frames)):
        raise ValidationError(f"record {record.id!r}: non-finite feature values")


def write_records(path: str, header: DatasetHeader, records) -> int:
    """Write a record file atomically (temp file + rename); returns byte count.

    Every record is validated against the header before any byte is written.
    """
    records = list(records)
    if header.video_count != len(records):
        raise ValidationError(
            f"header says {header.video_count} videos but {len(records)} were given"
        )
    for record in records:
        _validate_record(record, header)
    directory = os.path.dirname(os.path.abspath(path))
    fd, tmp_path = tempfile.mkstemp(dir=directory, prefix=".tmp_records_")
    written = 0
    try:
        with os.fdopen(fd, "wb") as f:
            written += f.write(
                _HEADER_STRUCT.pack(
                    MAGIC,
                    header.version,
                    header.vocab_size,
                    header.visual_dim,
                    header.audio_dim,
                    header.max_frames,
                    len(records),
                )
            )
            for record in records:
                encoded = record.id.encode("utf-8")
                written += f.write(struct.pack("<H", len(encoded)))
                written += f.write(encoded)
                written += f.write(struct.pack("<HH", record.frames.shape[0], len(record.labels)))
                if record.labels:
                    written += f.write(struct.pack(f"<{len(record.labels)}I", *record.labels))
                written += f.write(record.frames.astype("<f4", copy=False).tobytes())
        os.replace(tmp_path, path)
    except BaseException:
        if os.path.exists(tmp_path):
            os.unlink(tmp_path)
        raise
    return written


def _read_exact(f, n: int, what: str):
    data = f.read(n)
    if len(data) != n:
        raise CorruptionError(
            f"file truncated at byte {f.tell() - len(data)} while reading {what}"
        )
    return data


def read_records(path: str):
    """Open a record file -> (header, record generator).

    The header is validated eagerly; records stream lazily in file order
    with per-record bound checks. Truncation raises a corruption error
    naming the byte offset; records already yielded stay valid.
    """
    f = open(path, "rb")
    try:
        raw = f.read(_HEADER_STRUCT.size)
        if len(raw) < 4 or raw[:4] != MAGIC:
            raise FormatError(f"{path}: not a record file (bad magic)")
        if len(raw) != _HEADER_STRUCT.size:
            raise CorruptionError(f"file truncated at byte {len(raw)} while reading header")
        _, version, vocab, visual, audio, max_frames, count = _HEADER_STRUCT.unpack(raw)
        if version != VERSION:
            raise FormatError(f"{path}: unsupported version {version}")
        header = DatasetHeader(
            vocab_size=vocab,
            visual_dim=visual,
            audio_dim=audio,
            max_frames=max_frames,
            video_count=count,
            version=version,
        )
    except BaseException:
        f.close()
        raise

    def stream():
        try:
            for _ in range(count):
                (id_len,) = struct.unpack("<H", _read_exact(f, 2, "video id length"))
                video_id = _read_exact(f, id_len, "video id").decode("utf-8")
                num_frames, num_labels = struct.unpack(
                    "<HH", _read_exact(f, 4, "frame/label counts")
                )
                labels = list(
                    struct.unpack(
                        f"<{num_labels}I", _read_exact(f, 4 * num_labels, "labels")
                    )
                )
                feat_bytes = _read_exact(
                    f, 4 * num_frames * header.feature_dim, "features"
                )
                frames = (
                    np.frombuffer(feat_bytes, dtype="<f4")
                    .reshape(num_frames, header.feature_dim)
                    .copy()
                )
                record = VideoRecord(video_id, frames, labels)
                _validate_record(record, header)
                yield record
            trailing = f.read(1)
            if trailing:
                raise CorruptionError(
                    f"file has trailing data at byte {f.tell() - 1}"
                )
        finally:
            f.close()

    return header, stream()


def load_records(path: str):
    """Read a whole record file into memory -> (header, list of records)."""
    header, stream = read_records(path)
    return header, list(stream)


def pad_batch(records, header: DatasetHeader):
    """Zero-pad a batch to its longest item.

    Returns (visual [b x visual_dim x T], audio [b x audio_dim x T], mask,
    labels [b x vocab] multi-hot), features promoted to float64.
    """
    records = list(records)
    if not records:
        raise PreconditionError("pad_batch needs a non-empty batch")
    lengths = np.array([r.frames.shape[0] for r in records], dtype=np.int64)
    t_max = int(lengths.max())
    b = len(records)
    visual = np.zeros((b, header.visual_dim, t_max))
    audio = np.zeros((b, header.audio_dim, t_max))
    labels = np.zeros((b, header.vocab_size))
    for i, record in enumerate(records):
        t = record.frames.shape[0]
        feats = record.frames.astype(np.float64).T  # [(v+a) x t]
        visual[i, :, :t] = feats[: header.visual_dim]
        audio[i, :, :t] = feats[header.visual_dim :]
        labels[i, record.labels] = 1.0
    mask = TimeMask(b, t_max, lengths)
    return Tensor(visual), Tensor(audio), mask, Tensor(labels)


def generate_synthetic(
    path: str,
    vocab_size: int,
    video_count: int,
    seed: int,
    noise_sigma: float,
    visual_dim: int = 1024,
    audio_dim: int = 128,
    max_frames: int = 300,
    video_seed: int | None = None,
) -> DatasetHeader:
    """Write a seeded synthetic record file and return its header.

    Each class owns a fixed random visual+audio prototype pair drawn from
    ``seed``. A video samples 1-3 labels with probabilities (0.4, 0.4, 0.2)
    — 1.8 labels per video in expectation — and a frame count uniform in
    [30, max_frames]. Frames are the mean of the label prototypes plus
    Gaussian noise and a small linear per-video temporal drift. Fully
    deterministic given the seeds.

    ``video_seed`` draws the per-video randomness from a separate stream:
    two files with the same ``seed`` but different ``video_seed`` share
    class prototypes, which is how a matched validation split is made.
    """
    if vocab_size < 2:
        raise ConfigurationError("vocab_size must be >= 2")
    rng = np.random.default_rng(seed)
    d = visual_dim + audio_dim
    prototypes = rng.normal(size=(vocab_size, d))
    if video_seed is not None:
        rng = np.random.default_rng(video_seed)
    min_frames = min(30, max_frames)
    records = []
    for i in range(video_count):
        n_labels = int(rng.choice([1, 2, 3], p=[0.4, 0.4, 0.2]))
        labels = sorted(int(c) for c in rng.choice(vocab_size, size=n_labels, replace=False))
        t = int(rng.integers(min_frames, max_frames + 1))
        base = prototypes[labels].mean(axis=0)
        drift = 0.1 * rng.normal(size=d)
        ramp = np.linspace(-0.5, 0.5, t)[:, None]
        frames = base + ramp * drift + noise_sigma * rng.normal(size=(t, d))
        records.append(VideoRecord(f"vid{i:06d}", frames.astype(np.float32), labels))
    header = DatasetHeader(
        vocab_size=vocab_size,
        visual_dim=visual_dim,
        audio_dim=audio_dim,
        max_frames=max_frames,
        video_count=video_count,
    )
    write_records(path, header, records)
    return header
