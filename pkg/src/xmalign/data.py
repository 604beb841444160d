"""Synthetic paired audio-visual clips with known event timesteps.

Every clip belongs to one of K classes. Each class owns a latent prototype
in R^m. At an *event* timestep both modalities observe a fixed linear
projection of (prototype + per-clip jitter) plus Gaussian noise; at every
other timestep each modality sees independent distractor noise. The event
mask is stored with the clip, so pair selection and saliency have ground
truth to be checked against.

On disk (little-endian)::

    b"XMAV"  u16 version
    u32 K, clips_per_class, T, D_V, D_A, m
    f64 p_event, noise
    u64 seed
    per clip: u32 id, u32 label, T mask bytes,
              f32 visual[T, D_V], f32 audio[T, D_A]
"""

import struct
from dataclasses import dataclass, fields
from pathlib import Path

import numpy as np

from .errors import BadMagicError, ContractError, FormatError, TruncatedFileError, VersionMismatchError
from .ioutil import atomic_write_bytes
from .rng import Xoshiro256pp

DATASET_MAGIC = b"XMAV"
DATASET_VERSION = 1
_HEADER = struct.Struct("<4sH6I2dQ")
_GLOBAL_KEY = 1 << 40
SPLIT_FRACTIONS = (0.70, 0.15, 0.15)
SPLITS = ("train", "val", "test")


@dataclass(frozen=True)
class SynthConfig:
    num_classes: int = 8
    clips_per_class: int = 64
    timesteps: int = 20
    visual_dim: int = 64
    audio_dim: int = 24
    latent_dim: int = 16
    p_event: float = 0.2
    noise: float = 0.1
    distractor: float = 1.0
    jitter: float = 0.3
    nuisance: float = 0.0
    nuisance_rank: int = 2
    seed: int = 1

    def __post_init__(self):
        for name in ("num_classes", "clips_per_class", "timesteps", "visual_dim", "audio_dim", "latent_dim"):
            if int(getattr(self, name)) < 1:
                raise ContractError(f"{name} must be >= 1")
        if not 0.0 < self.p_event <= 1.0:
            raise ContractError("p_event must lie in (0, 1]")
        if min(self.noise, self.distractor, self.jitter, self.nuisance) < 0:
            raise ContractError("noise, distractor, jitter and nuisance must be non-negative")
        if not 1 <= self.nuisance_rank <= self.latent_dim:
            raise ContractError("nuisance_rank must lie in [1, latent_dim]")
        if not 0 <= self.seed < 2**64:
            raise ContractError("seed must fit in 64 bits")

    def header(self) -> "DatasetHeader":
        return DatasetHeader(
            self.num_classes, self.clips_per_class, self.timesteps, self.visual_dim,
            self.audio_dim, self.latent_dim, float(self.p_event), float(self.noise), int(self.seed),
        )


@dataclass(frozen=True)
class DatasetHeader:
    num_classes: int
    clips_per_class: int
    timesteps: int
    visual_dim: int
    audio_dim: int
    latent_dim: int
    p_event: float
    noise: float
    seed: int

    @property
    def num_clips(self) -> int:
        return self.num_classes * self.clips_per_class


@dataclass
class ClipRecord:
    clip_id: int
    label: int
    event_mask: np.ndarray
    visual: np.ndarray
    audio: np.ndarray


@dataclass
class Dataset:
    header: DatasetHeader
    ids: np.ndarray  # (N,) uint32
    labels: np.ndarray  # (N,) uint32
    masks: np.ndarray  # (N, T) bool
    visual: np.ndarray  # (N, T, D_V) float32
    audio: np.ndarray  # (N, T, D_A) float32

    def __len__(self):
        return self.ids.shape[0]

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return self.header == other.header and all(
            a.dtype == b.dtype and a.shape == b.shape and a.tobytes() == b.tobytes()
            for a, b in (
                (self.ids, other.ids), (self.labels, other.labels), (self.masks, other.masks),
                (self.visual, other.visual), (self.audio, other.audio),
            )
        )

    def clip(self, i: int) -> ClipRecord:
        return ClipRecord(int(self.ids[i]), int(self.labels[i]), self.masks[i], self.visual[i], self.audio[i])

    def split_indices(self) -> dict:
        """Stratified 70/15/15 split by position within each class (deterministic)."""
        n = self.header.clips_per_class
        n_train = int(round(SPLIT_FRACTIONS[0] * n))
        n_val = int(round(SPLIT_FRACTIONS[1] * n))
        if n_train < 1 or n_val < 1 or n - n_train - n_val < 1:
            raise ContractError(f"{n} clips per class is too few for a 70/15/15 split")
        out = {s: [] for s in SPLITS}
        for k in range(self.header.num_classes):
            members = np.flatnonzero(self.labels == k)
            out["train"].append(members[:n_train])
            out["val"].append(members[n_train:n_train + n_val])
            out["test"].append(members[n_train + n_val:])
        return {s: np.concatenate(v) for s, v in out.items()}


def _global_stream(header: DatasetHeader) -> Xoshiro256pp:
    return Xoshiro256pp(header.seed, [_GLOBAL_KEY])


def projections(header: DatasetHeader):
    """Observation maps P_V (D_V x m), P_A (D_A x m) and class prototypes (K x m).

    Everything is derived from the header, so a loaded dataset regenerates
    the same maps without storing them.
    """
    m = header.latent_dim
    g = _global_stream(header)
    p_v = g.normal(header.visual_dim * m)[:, 0].reshape(header.visual_dim, m) / np.sqrt(m)
    p_a = g.normal(header.audio_dim * m)[:, 0].reshape(header.audio_dim, m) / np.sqrt(m)
    protos = g.normal(header.num_classes * m)[:, 0].reshape(header.num_classes, m)
    return p_v, p_a, protos


def nuisance_basis(header: DatasetHeader, rank: int) -> np.ndarray:
    """Orthonormal (m x rank) directions of visual-only clip content."""
    g = Xoshiro256pp(header.seed, [_GLOBAL_KEY + 1])
    raw = g.normal(header.latent_dim * rank)[:, 0].reshape(header.latent_dim, rank)
    q, r = np.linalg.qr(raw)
    return q * np.sign(np.diag(r))


def synth_dataset(config: SynthConfig) -> Dataset:
    h = config.header()
    n, t_len, m = h.num_clips, h.timesteps, h.latent_dim
    ids = np.arange(n, dtype=np.uint64)
    labels = (ids // np.uint64(h.clips_per_class)).astype(np.uint32)
    p_v, p_a, protos = projections(h)

    # event masks: first non-empty block of T uniforms from each clip's mask stream
    mask_rng = Xoshiro256pp(h.seed, (ids << np.uint64(8)) | np.uint64(0))
    masks = np.zeros((n, t_len), dtype=bool)
    pending = np.ones(n, dtype=bool)
    while pending.any():
        draw = (mask_rng.uniform(t_len) < config.p_event).T
        masks[pending] = draw[pending]
        pending &= ~masks.any(axis=1)

    val_rng = Xoshiro256pp(h.seed, (ids << np.uint64(8)) | np.uint64(1))
    jitter = val_rng.normal(m).T * config.jitter
    latent = protos[labels.astype(np.int64)] + jitter  # (N, m)
    # visual-only content: audio never observes it
    basis = nuisance_basis(h, config.nuisance_rank)
    latent_v = latent + (val_rng.normal(config.nuisance_rank).T * config.nuisance) @ basis.T
    visual = np.empty((n, t_len, h.visual_dim))
    audio = np.empty((n, t_len, h.audio_dim))
    for t in range(t_len):
        nv = val_rng.normal(h.visual_dim).T
        na = val_rng.normal(h.audio_dim).T
        ev = masks[:, t][:, None]
        visual[:, t] = np.where(ev, latent_v @ p_v.T + config.noise * nv, config.distractor * nv)
        audio[:, t] = np.where(ev, latent @ p_a.T + config.noise * na, config.distractor * na)

    return Dataset(
        header=h,
        ids=ids.astype(np.uint32),
        labels=labels,
        masks=masks,
        visual=visual.astype(np.float32),
        audio=audio.astype(np.float32),
    )


def dataset_to_bytes(ds: Dataset) -> bytes:
    h = ds.header
    parts = [
        _HEADER.pack(
            DATASET_MAGIC, DATASET_VERSION, h.num_classes, h.clips_per_class, h.timesteps,
            h.visual_dim, h.audio_dim, h.latent_dim, h.p_event, h.noise, h.seed,
        )
    ]
    for i in range(len(ds)):
        parts.append(struct.pack("<2I", int(ds.ids[i]), int(ds.labels[i])))
        parts.append(ds.masks[i].astype(np.uint8).tobytes())
        parts.append(ds.visual[i].astype("<f4").tobytes())
        parts.append(ds.audio[i].astype("<f4").tobytes())
    return b"".join(parts)


def dataset_from_bytes(buf: bytes) -> Dataset:
    if len(buf) < 4 or buf[:4] != DATASET_MAGIC:
        raise BadMagicError(f"not a dataset file (magic {bytes(buf[:4])!r})")
    if len(buf) < 6:
        raise TruncatedFileError("file ends inside the header")
    (version,) = struct.unpack_from("<H", buf, 4)
    if version != DATASET_VERSION:
        raise VersionMismatchError(f"dataset version {version}, expected {DATASET_VERSION}")
    if len(buf) < _HEADER.size:
        raise TruncatedFileError("file ends inside the header")
    _, _, k, cpc, t_len, dv, da, m, p_event, noise, seed = _HEADER.unpack_from(buf, 0)
    h = DatasetHeader(k, cpc, t_len, dv, da, m, p_event, noise, seed)
    n = h.num_clips
    ids = np.empty(n, np.uint32)
    labels = np.empty(n, np.uint32)
    masks = np.empty((n, t_len), bool)
    visual = np.empty((n, t_len, dv), np.float32)
    audio = np.empty((n, t_len, da), np.float32)
    rec = 8 + t_len + 4 * t_len * (dv + da)
    off = _HEADER.size
    for i in range(n):
        if off + 8 > len(buf):
            raise TruncatedFileError(f"file truncated before clip id {i}")
        cid, lab = struct.unpack_from("<2I", buf, off)
        if off + rec > len(buf):
            raise TruncatedFileError(f"file truncated inside clip id {cid}")
        ids[i], labels[i] = cid, lab
        o = off + 8
        masks[i] = np.frombuffer(buf, np.uint8, t_len, o).astype(bool)
        o += t_len
        visual[i] = np.frombuffer(buf, "<f4", t_len * dv, o).reshape(t_len, dv)
        o += 4 * t_len * dv
        audio[i] = np.frombuffer(buf, "<f4", t_len * da, o).reshape(t_len, da)
        off += rec
    if off != len(buf):
        raise FormatError(f"{len(buf) - off} trailing bytes after the last clip")
    return Dataset(h, ids, labels, masks, visual, audio)


def save_dataset(ds: Dataset, path) -> None:
    atomic_write_bytes(Path(path), dataset_to_bytes(ds))


def load_dataset(path) -> Dataset:
    return dataset_from_bytes(Path(path).read_bytes())


def config_fields() -> list:
    return [f.name for f in fields(SynthConfig)]
