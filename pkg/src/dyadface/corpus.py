"""Affect vectors, dyad sequences and the synthetic ground-truth corpus.

The synthetic corpus stands in for recorded interviews. Every sequence has a
piecewise-constant schedule of (affect class, intensity level). The agent's
shape parameters relax toward a class- and intensity-specific target with a
rate that grows with intensity, and the partner's affect vector is a noisy
one-hot encoding of the scheduled class.
"""
from __future__ import annotations

import enum
from dataclasses import asdict, dataclass, field
from pathlib import Path

import numpy as np

from .pdm import RIGID_DIM, PDMModel, load_pdm, save_pdm
from .template import N_LANDMARKS, template_face
from .textio import FLOAT_FMT, LineReader, write_text

N_AFFECT = 8
FPS = 30


class AffectClass(enum.IntEnum):
    JOY = 0
    ANGER = 1
    SURPRISE = 2
    FEAR = 3
    CONTEMPT = 4
    DISGUST = 5
    SADNESS = 6
    NEUTRAL = 7

    @classmethod
    def parse(cls, text: str) -> "AffectClass":
        text = text.strip()
        if text.isdigit():
            return cls(int(text))
        return cls[text.upper()]


def one_hot(cls: int) -> np.ndarray:
    v = np.zeros(N_AFFECT)
    v[int(cls)] = 1.0
    return v


def check_affect(v) -> np.ndarray:
    v = np.asarray(v, dtype=np.float64)
    if v.shape[-1] != N_AFFECT:
        raise ValueError(f"affect vectors have {N_AFFECT} components, got {v.shape[-1]}")
    if not np.all(np.isfinite(v)):
        raise ValueError("affect vector is not finite")
    if np.any(v < 0):
        raise ValueError("affect likelihoods must be non-negative")
    return v


def affect_argmax(v) -> AffectClass:
    """Most likely class; ties go to the lowest index."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (N_AFFECT,) or not np.all(np.isfinite(v)):
        raise ValueError("affect_argmax needs a finite 8-vector")
    return AffectClass(int(np.argmax(v)))


def aggregate_affect(window) -> np.ndarray:
    """Collapse a window of affect vectors into one (component-wise mean)."""
    window = np.asarray(window, dtype=np.float64)
    if window.ndim != 2 or len(window) == 0:
        raise ValueError("aggregate_affect needs a non-empty window of affect vectors")
    check_affect(window)
    return window.mean(axis=0)


def trailing_aggregate(affect: np.ndarray, window: int) -> np.ndarray:
    """Aggregate of the ``window`` frames ending at each frame (shorter at the start)."""
    affect = np.asarray(affect, dtype=np.float64)
    csum = np.vstack([np.zeros((1, affect.shape[1])), np.cumsum(affect, axis=0)])
    idx = np.arange(1, len(affect) + 1)
    lo = np.maximum(idx - window, 0)
    return (csum[idx] - csum[lo]) / (idx - lo)[:, None]


@dataclass
class Standardizer:
    """Per-dimension affine map to zero mean and unit spread."""

    mean: np.ndarray
    std: np.ndarray

    @classmethod
    def fit(cls, data) -> "Standardizer":
        data = np.asarray(data, dtype=np.float64)
        std = data.std(axis=0)
        std = np.where(std > 0, std, 1.0)
        return cls(data.mean(axis=0), std)

    def transform(self, x):
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z):
        return np.asarray(z, dtype=np.float64) * self.std + self.mean


@dataclass
class DyadFrame:
    t: int
    partner_affect: np.ndarray
    agent_shape: np.ndarray
    label: tuple[int, int] | None = None


@dataclass
class DyadSequence:
    """Frames stored column-wise: ``affect`` is (T, 8), ``shapes`` is (T, d)."""

    id: str
    affect: np.ndarray
    shapes: np.ndarray
    t0: int = 0
    classes: np.ndarray | None = None
    intensity: np.ndarray | None = None

    def __post_init__(self):
        self.affect = np.asarray(self.affect, dtype=np.float64).reshape(-1, N_AFFECT)
        self.shapes = np.asarray(self.shapes, dtype=np.float64)
        if self.shapes.ndim != 2 or len(self.shapes) != len(self.affect):
            raise ValueError("affect and shape arrays must have the same number of frames")
        if (self.classes is None) != (self.intensity is None):
            raise ValueError("labels need both class and intensity")
        if self.classes is not None:
            self.classes = np.asarray(self.classes, dtype=np.int64)
            self.intensity = np.asarray(self.intensity, dtype=np.int64)
            if len(self.classes) != len(self) or len(self.intensity) != len(self):
                raise ValueError("label arrays must match the frame count")

    def __len__(self) -> int:
        return len(self.affect)

    @property
    def d(self) -> int:
        return self.shapes.shape[1]

    @property
    def has_labels(self) -> bool:
        return self.classes is not None

    @property
    def times(self) -> np.ndarray:
        return self.t0 + np.arange(len(self))

    def frame(self, i: int) -> DyadFrame:
        label = (int(self.classes[i]), int(self.intensity[i])) if self.has_labels else None
        return DyadFrame(self.t0 + i, self.affect[i], self.shapes[i], label)

    def slice(self, start: int, stop: int) -> "DyadSequence":
        lab = self.has_labels
        return DyadSequence(
            self.id, self.affect[start:stop], self.shapes[start:stop], self.t0 + start,
            self.classes[start:stop] if lab else None, self.intensity[start:stop] if lab else None,
        )


@dataclass
class SynthConfig:
    n_sequences: int = 200
    seq_len: int = 100
    m: int = 10
    n_intensity_levels: int = 3
    seed: int = 0
    start_index: int = 0
    segment_min: int = 60
    segment_max: int = 200
    alpha_max: float = 0.6
    dyn_noise: float = 0.02
    affect_noise: float = 0.05
    face_scale: float = 90.0
    center: float = 128.0

    def validate(self) -> None:
        if self.n_sequences < 1:
            raise ValueError("n_sequences must be >= 1")
        if self.start_index < 0:
            raise ValueError("start_index must be >= 0")
        if self.seq_len < 2:
            raise ValueError("seq_len must be >= 2")
        if not 3 <= self.n_intensity_levels <= 9:
            raise ValueError("n_intensity_levels must lie in [3, 9]")
        if self.m < 1:
            raise ValueError("m must be >= 1")
        if not 1 <= self.segment_min <= self.segment_max:
            raise ValueError("segment lengths must satisfy 1 <= min <= max")


@dataclass
class Corpus:
    sequences: list[DyadSequence]
    config: dict = field(default_factory=dict)
    pdm: PDMModel | None = None

    @property
    def d(self) -> int:
        return self.sequences[0].d

    def stacked(self):
        """All frames concatenated: (affect, shapes, classes or None)."""
        affect = np.vstack([s.affect for s in self.sequences])
        shapes = np.vstack([s.shapes for s in self.sequences])
        classes = None
        if all(s.has_labels for s in self.sequences):
            classes = np.concatenate([s.classes for s in self.sequences])
        return affect, shapes, classes

    def n_frames(self) -> int:
        return sum(len(s) for s in self.sequences)


# sub-seed streams
_PDM_STREAM, _TARGET_STREAM, _SEQ_STREAM = 0, 1, 2


def _region_fields(rng) -> np.ndarray:
    """One random smooth deformation field over the 68 landmarks."""
    template = template_face()
    regions = [range(0, 17), range(17, 22), range(22, 27), range(27, 36),
               range(36, 42), range(42, 48), range(48, 60), range(60, 68)]
    field_ = np.zeros((N_LANDMARKS, 3))
    for reg in regions:
        idx = np.fromiter(reg, dtype=int)
        shift = rng.normal(size=3) * np.array([1.0, 1.0, 0.3])
        grad = rng.normal(size=(3, 3)) * np.array([1.0, 1.0, 0.3])[:, None]
        local = template[idx] - template[idx].mean(axis=0)
        field_[idx] = shift + local @ grad.T
    return field_


def _similarity_tangent(mean: np.ndarray) -> np.ndarray:
    """Orthonormal basis of infinitesimal similarity motions of ``mean``."""
    cols = []
    for k in range(3):
        t = np.zeros_like(mean)
        t[:, k] = 1.0
        cols.append(t.ravel())
    for axis in np.eye(3):
        cols.append(np.cross(axis, mean).ravel())
    cols.append(mean.ravel())
    q, _ = np.linalg.qr(np.column_stack(cols))
    return q


def synthetic_pdm(m: int = 10, seed: int = 0) -> PDMModel:
    """Generating model for the synthetic corpus: template mean + smooth modes.

    Modes are orthogonal to similarity motions of the mean so non-rigid
    parameters never mimic head pose.
    """
    rng = np.random.default_rng([seed, _PDM_STREAM])
    mean = template_face()
    tangent = _similarity_tangent(mean)
    raw = np.column_stack([_region_fields(rng).ravel() for _ in range(m)])
    raw -= tangent @ (tangent.T @ raw)
    basis, r = np.linalg.qr(raw)
    basis *= np.sign(np.diag(r))
    basis, _ = np.linalg.qr(basis)
    basis *= np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(m)])
    std = np.geomspace(0.15, 0.06, m) if m > 1 else np.array([0.15])
    return PDMModel(mean, basis, std ** 2)


def _class_targets(cfg: SynthConfig, d: int, rng) -> tuple[np.ndarray, np.ndarray]:
    levels = cfg.n_intensity_levels
    span = 1.2
    delta = span / (levels - 1)
    alpha_min = cfg.alpha_max / levels
    noise_sd = cfg.dyn_noise / np.sqrt(1.0 - (1.0 - alpha_min) ** 2)
    min_sep = 2 * span + 6.0 * noise_sd * np.sqrt(d)
    for _ in range(1000):
        centers = rng.normal(scale=1.5, size=(N_AFFECT, d))
        diff = centers[:, None, :] - centers[None, :, :]
        dist = np.sqrt(np.sum(diff ** 2, axis=-1))
        if np.min(dist[np.triu_indices(N_AFFECT, 1)]) >= min_sep:
            break
    else:
        raise RuntimeError("could not place well-separated class targets")
    neutral = centers[AffectClass.NEUTRAL]
    dirs = centers - neutral
    dirs[AffectClass.NEUTRAL] = rng.normal(size=d)
    dirs /= np.linalg.norm(dirs, axis=1, keepdims=True)
    offsets = (np.arange(1, levels + 1) - (levels + 1) / 2.0) * delta
    targets = centers[:, None, :] + offsets[None, :, None] * dirs[:, None, :]
    return centers, targets


def _physical_scale(cfg: SynthConfig, pdm: PDMModel) -> tuple[np.ndarray, np.ndarray]:
    base = np.zeros(pdm.dim)
    base[0] = cfg.face_scale
    base[4:6] = cfg.center
    unit = np.concatenate([[cfg.face_scale / 18.0], [0.08, 0.08, 0.08], [5.0, 5.0],
                           np.sqrt(pdm.variances)])
    return base, unit


def _schedule(cfg: SynthConfig, rng) -> tuple[np.ndarray, np.ndarray]:
    classes = np.empty(cfg.seq_len, dtype=np.int64)
    intensity = np.empty(cfg.seq_len, dtype=np.int64)
    t, prev = 0, -1
    while t < cfg.seq_len:
        length = int(rng.integers(cfg.segment_min, cfg.segment_max + 1))
        c = int(rng.integers(N_AFFECT - 1 if prev >= 0 else N_AFFECT))
        if prev >= 0 and c >= prev:
            c += 1
        level = int(rng.integers(1, cfg.n_intensity_levels + 1))
        classes[t:t + length] = c
        intensity[t:t + length] = level
        t += length
        prev = c
    return classes, intensity


def synth_corpus(cfg: SynthConfig | None = None) -> tuple[PDMModel, list[DyadSequence]]:
    """Generate the synthetic world for ``cfg.seed`` and sequences
    ``start_index .. start_index + n_sequences - 1`` from it.

    The PDM and class targets depend only on ``seed`` (and ``m``,
    ``n_intensity_levels``), so corpora that differ only in ``start_index``
    are disjoint samples of one world. Sequence ``i`` draws from
    ``default_rng([seed + i, 2])``.
    """
    cfg = cfg or SynthConfig()
    cfg.validate()
    pdm = synthetic_pdm(cfg.m, cfg.seed)
    d = pdm.dim
    _, targets = _class_targets(cfg, d, np.random.default_rng([cfg.seed, _TARGET_STREAM]))
    base, unit = _physical_scale(cfg, pdm)
    levels = cfg.n_intensity_levels
    sequences = []
    for i in range(cfg.start_index, cfg.start_index + cfg.n_sequences):
        rng = np.random.default_rng([cfg.seed + i, _SEQ_STREAM])
        classes, intensity = _schedule(cfg, rng)
        z = np.empty((cfg.seq_len, d))
        z[0] = targets[classes[0], intensity[0] - 1] + cfg.dyn_noise * rng.normal(size=d)
        for t in range(cfg.seq_len - 1):
            alpha = cfg.alpha_max * intensity[t + 1] / levels
            goal = targets[classes[t + 1], intensity[t + 1] - 1]
            z[t + 1] = z[t] + alpha * (goal - z[t]) + cfg.dyn_noise * rng.normal(size=d)
        shapes = base + unit * z
        affect = np.eye(N_AFFECT)[classes] + cfg.affect_noise * rng.normal(size=(cfg.seq_len, N_AFFECT))
        affect = np.clip(affect, 0.0, None)
        sequences.append(DyadSequence(f"seq_{i:06d}", affect, shapes, 0, classes, intensity))
    return pdm, sequences


def synth(cfg: SynthConfig | None = None) -> Corpus:
    cfg = cfg or SynthConfig()
    pdm, seqs = synth_corpus(cfg)
    return Corpus(seqs, asdict(cfg), pdm)


# --- file formats ---------------------------------------------------------

def _fmt(x: float) -> str:
    return FLOAT_FMT % x


def save_sequence(seq: DyadSequence, path) -> None:
    lab = int(seq.has_labels)
    lines = ["SEQ v1", f"id={seq.id} frames={len(seq)} d={seq.d} labels={lab} t0={seq.t0}"]
    for i in range(len(seq)):
        row = [str(seq.t0 + i)]
        row += [_fmt(v) for v in seq.affect[i]]
        row += [_fmt(v) for v in seq.shapes[i]]
        if lab:
            row += [str(int(seq.classes[i])), str(int(seq.intensity[i]))]
        lines.append(" ".join(row))
    write_text(path, lines)


def load_sequence(path) -> DyadSequence:
    rd = LineReader(path)
    rd.expect("SEQ v1")
    meta = rd.keyvalues()
    try:
        sid = meta["id"]
        n, d, lab, t0 = (int(meta[k]) for k in ("frames", "d", "labels", "t0"))
    except (KeyError, ValueError):
        raise rd.error("header needs id, frames, d, labels and t0") from None
    if d < RIGID_DIM:
        raise rd.error("shape dimension too small")
    width = 1 + N_AFFECT + d + 2 * lab
    affect = np.empty((n, N_AFFECT))
    shapes = np.empty((n, d))
    classes = np.empty(n, dtype=np.int64)
    intensity = np.empty(n, dtype=np.int64)
    for i in range(n):
        toks = rd.next().split()
        if len(toks) != width:
            raise rd.error(f"expected {width} fields, got {len(toks)}")
        try:
            t = int(toks[0])
            vals = [float(x) for x in toks[1:1 + N_AFFECT + d]]
            if lab:
                classes[i], intensity[i] = int(toks[-2]), int(toks[-1])
        except ValueError:
            raise rd.error("malformed frame record") from None
        if t != t0 + i:
            raise rd.error(f"frame index {t} breaks contiguity (expected {t0 + i})")
        affect[i] = vals[:N_AFFECT]
        shapes[i] = vals[N_AFFECT:]
        if not np.all(np.isfinite(affect[i])) or np.any(affect[i] < 0):
            raise rd.error("affect values must be finite and non-negative")
    if not rd.at_end():
        rd.next()
        raise rd.error("trailing data after the last frame")
    if lab:
        return DyadSequence(sid, affect, shapes, t0, classes, intensity)
    return DyadSequence(sid, affect, shapes, t0)


def save_corpus(corpus: Corpus, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    lines = ["CORPUS v1", " ".join(f"{k}={v}" for k, v in corpus.config.items())]
    if corpus.pdm is not None:
        save_pdm(corpus.pdm, directory / "pdm.txt")
        lines.append("pdm pdm.txt")
    for seq in corpus.sequences:
        name = f"{seq.id}.txt"
        save_sequence(seq, directory / name)
        lines.append(f"seq {name}")
    write_text(directory / "manifest", lines)


def load_corpus(directory) -> Corpus:
    directory = Path(directory)
    rd = LineReader(directory / "manifest")
    rd.expect("CORPUS v1")
    config = {}
    line = rd.next().strip()
    for tok in line.split():
        if "=" not in tok:
            raise rd.error(f"expected key=value, got {tok!r}")
        key, value = tok.split("=", 1)
        config[key] = value
    pdm = None
    seqs = []
    while not rd.at_end():
        parts = rd.next().split()
        if len(parts) != 2 or parts[0] not in ("pdm", "seq"):
            raise rd.error("expected 'pdm <file>' or 'seq <file>'")
        if parts[0] == "pdm":
            pdm = load_pdm(directory / parts[1])
        else:
            seqs.append(load_sequence(directory / parts[1]))
    if not seqs:
        raise rd.error("manifest lists no sequences")
    return Corpus(seqs, config, pdm)
