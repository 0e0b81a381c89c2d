"""Metrics and reports: MSE, temporal smoothness, clustering recovery, mode comparison.

All shape-space metrics are computed on standardized shape vectors. The MSE
is the mean over frames and dimensions of squared differences.
"""
from __future__ import annotations

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .clstm import CLstmModel, GenerationMode, _affect_track, generate_standardized
from .corpus import N_AFFECT, Corpus, DyadSequence, Standardizer
from .dictionary import AffectShapeDictionary, generate_sequence
from .pdm import PDMModel, project_many

MSE_DEFINITION = "mean over frames and dimensions of squared differences of standardized shape vectors"


def mse(generated, truth) -> float:
    generated = np.asarray(generated, dtype=np.float64)
    truth = np.asarray(truth, dtype=np.float64)
    if generated.shape != truth.shape:
        raise ValueError(f"shape mismatch: generated {generated.shape} vs truth {truth.shape}")
    if generated.size == 0:
        raise ValueError("mse of empty sequences is undefined")
    diff = generated - truth
    return float(np.mean(diff * diff))


def smoothness(shapes, pdm: PDMModel | None = None, standardizer: Standardizer | None = None) -> dict:
    """Inter-frame displacement statistics.

    ``mean_disp``/``max_disp`` are euclidean steps between consecutive
    (standardized, when a transform is given) shape vectors. The pixel
    variants measure how far the projected landmark centroid moves.
    """
    shapes = np.asarray(shapes, dtype=np.float64)
    if shapes.ndim != 2 or len(shapes) < 2:
        raise ValueError("smoothness needs at least 2 frames")
    z = standardizer.transform(shapes) if standardizer is not None else shapes
    steps = np.linalg.norm(np.diff(z, axis=0), axis=1)
    out = {"mean_disp": float(steps.mean()), "max_disp": float(steps.max())}
    if pdm is not None:
        centroids = project_many(pdm, shapes).mean(axis=1)
        pix = np.linalg.norm(np.diff(centroids, axis=0), axis=1)
        out["pixel_mean"] = float(pix.mean())
        out["pixel_max"] = float(pix.max())
    return out


def displacement_trace(shapes, standardizer: Standardizer | None = None) -> np.ndarray:
    z = np.asarray(shapes, dtype=np.float64)
    if standardizer is not None:
        z = standardizer.transform(z)
    return np.linalg.norm(np.diff(z, axis=0), axis=1)


# --- clustering -------------------------------------------------------------

def _pairs(x):
    return x * (x - 1) / 2.0


def adjusted_rand_index(labels_true, labels_pred) -> float:
    labels_true = np.asarray(labels_true)
    labels_pred = np.asarray(labels_pred)
    if labels_true.shape != labels_pred.shape:
        raise ValueError("label arrays must have the same length")
    n = len(labels_true)
    if n < 2:
        return 1.0
    _, ti = np.unique(labels_true, return_inverse=True)
    _, pi = np.unique(labels_pred, return_inverse=True)
    table = np.zeros((ti.max() + 1, pi.max() + 1))
    np.add.at(table, (ti, pi), 1)
    index = _pairs(table).sum()
    rows, cols = _pairs(table.sum(1)).sum(), _pairs(table.sum(0)).sum()
    expected = rows * cols / _pairs(n)
    top = 0.5 * (rows + cols)
    if top == expected:
        return 1.0
    return float((index - expected) / (top - expected))


def cluster_recovery(dictionary: AffectShapeDictionary, corpus: Corpus) -> dict:
    """Class-assignment quality of a dictionary against planted corpus labels."""
    _, shapes, classes = corpus.stacked()
    if classes is None:
        raise ValueError("cluster recovery needs a labelled corpus")
    pred = dictionary.classify_members(shapes)
    if np.any(pred < 0):
        raise ValueError(f"{int(np.sum(pred < 0))} corpus frames are not dictionary members")
    purity = {}
    for c in range(N_AFFECT):
        mine = classes[pred == c]
        purity[c] = float(np.mean(mine == c)) if len(mine) else float("nan")
    counts = dictionary.subcluster_counts()
    histogram = np.bincount(counts, minlength=10)[1:10].tolist()
    return {
        "ari": adjusted_rand_index(classes, pred),
        "purity": [purity[c] for c in range(N_AFFECT)],
        "subcluster_counts": counts,
        "subcluster_histogram": histogram,
        "counts_in_range": bool(all(1 <= k <= 9 for k in counts)),
        "min_subcluster_size": int(min(s.size for c in dictionary.clusters for s in c.subclusters)),
    }


# --- C-LSTM mode comparison -----------------------------------------------

@dataclass
class ModeComparison:
    mse_overlap: float
    mse_nonoverlap: float
    mse_overlap_closed_loop: float
    mse_nonoverlap_closed_loop: float
    mse_by_horizon: list
    frames: int
    seconds_per_frame_overlap: float
    seconds_per_frame_nonoverlap: float

    @property
    def overlap_better(self) -> bool:
        return self.mse_overlap < self.mse_nonoverlap


def _tracks(model: CLstmModel, sequences: list[DyadSequence], n_blocks: int):
    n = model.config.window
    length = n * (n_blocks + 1)
    aff = np.stack([_affect_track(s.affect[:length], model.config) for s in sequences], axis=1)
    std = np.stack([model.standardizer.transform(s.shapes[:length]) for s in sequences], axis=1)
    return aff, std


def compare_modes(model: CLstmModel, sequences: list[DyadSequence], n_blocks: int | None = None) -> ModeComparison:
    """Overlap against NonOverlap generation on the same held-out target frames.

    Each sequence supplies ``n`` observed frames followed by ``n_blocks``
    blocks of ``n`` target frames. Overlap predicts every target frame from
    the ``n`` observed frames just before it, so consecutive windows overlap
    in all but one frame. NonOverlap reads the ``n`` observed frames before
    each block and free-runs through the whole block. Both closed-loop
    variants, started once from the first window, are reported alongside.
    """
    n = model.config.window
    usable = min(len(s) for s in sequences) // n - 1 if sequences else 0
    n_blocks = usable if n_blocks is None else n_blocks
    if n_blocks < 1 or n_blocks > usable:
        raise ValueError(f"every sequence needs at least {n * (n_blocks + 1 if n_blocks else 2)} frames")
    aff, std = _tracks(model, sequences, n_blocks)
    batch, steps = len(sequences), n * n_blocks
    truth = std[n:]

    start = time.perf_counter()
    over = np.empty_like(truth)
    for t in range(steps):
        over[t] = generate_standardized(model, aff[t:t + n], std[t:t + n], aff[t + n:t + n + 1], 1,
                                        GenerationMode.OVERLAP)[0]
    t_over = (time.perf_counter() - start) / (steps * batch)

    start = time.perf_counter()
    blocks = np.empty_like(truth)
    for b in range(n_blocks):
        lo = b * n
        blocks[lo:lo + n] = generate_standardized(model, aff[lo:lo + n], std[lo:lo + n], aff[lo + n:lo + 2 * n],
                                                  n, GenerationMode.NONOVERLAP)
    t_block = (time.perf_counter() - start) / (steps * batch)

    closed_over = generate_standardized(model, aff[:n], std[:n], aff[n:], steps, GenerationMode.OVERLAP)
    closed_block = generate_standardized(model, aff[:n], std[:n], aff[n:], steps, GenerationMode.NONOVERLAP)
    by_horizon = ((blocks - truth) ** 2).reshape(n_blocks, n, batch, -1).mean(axis=(0, 2, 3))
    return ModeComparison(
        mse(over, truth), mse(blocks, truth), mse(closed_over, truth), mse(closed_block, truth),
        [float(v) for v in by_horizon], steps * batch, t_over, t_block,
    )


def dictionary_latency(dictionary: AffectShapeDictionary, affect_stream, seed: int = 0, top_k: int = 5) -> float:
    """Wall-clock seconds per generated frame for dictionary sampling."""
    stream = np.asarray(affect_stream, dtype=np.float64).reshape(-1, N_AFFECT)
    if len(stream) == 0:
        raise ValueError("latency needs at least one frame")
    start = time.perf_counter()
    generate_sequence(dictionary, stream, np.random.default_rng(seed), top_k)
    return (time.perf_counter() - start) / len(stream)


# --- report -----------------------------------------------------------------

@dataclass
class EvalReport:
    """Flat metric table plus a configuration echo.

    Keys are dotted (``smoothness.max_disp``); values are numbers, booleans,
    strings or lists of numbers.
    """

    metrics: dict = field(default_factory=dict)
    config: dict = field(default_factory=dict)

    def add(self, prefix: str, values: dict) -> None:
        for key, value in values.items():
            self.metrics[f"{prefix}.{key}"] = value

    def check_finite(self) -> None:
        for key, value in self.metrics.items():
            for v in (value if isinstance(value, list) else [value]):
                if isinstance(v, float) and not math.isfinite(v) and not key.startswith("clusters.purity"):
                    raise FloatingPointError(f"metric {key} is not finite")

    def to_json(self) -> str:
        return json.dumps({"format": "EVAL v1", "mse_definition": MSE_DEFINITION,
                           "metrics": self.metrics, "config": self.config}, indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "EvalReport":
        data = json.loads(text)
        if data.get("format") != "EVAL v1":
            raise ValueError("not an EVAL v1 report")
        return cls(data["metrics"], data["config"])

    def to_lines(self) -> list[str]:
        lines = ["EVAL v1", f"# mse = {MSE_DEFINITION}"]
        for key in sorted(self.config):
            lines.append(f"config.{key}={_fmt_value(self.config[key])}")
        for key in sorted(self.metrics):
            lines.append(f"{key}={_fmt_value(self.metrics[key])}")
        return lines

    @classmethod
    def from_lines(cls, lines) -> "EvalReport":
        lines = [ln for ln in lines if ln.strip()]
        if not lines or lines[0].strip() != "EVAL v1":
            raise ValueError("not an EVAL v1 key-value report")
        report = cls()
        for ln in lines[1:]:
            if ln.startswith("#"):
                continue
            key, sep, value = ln.partition("=")
            if not sep:
                raise ValueError(f"malformed report line: {ln!r}")
            parsed = _parse_value(value)
            if key.startswith("config."):
                report.config[key[len("config."):]] = parsed
            else:
                report.metrics[key] = parsed
        return report


def _fmt_value(v) -> str:
    if isinstance(v, bool):
        return "true" if v else "false"
    if isinstance(v, (list, tuple)):
        return "[" + ",".join(_fmt_value(x) for x in v) + "]"
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _parse_value(text: str):
    text = text.strip()
    if text in ("true", "false"):
        return text == "true"
    if text.startswith("[") and text.endswith("]"):
        body = text[1:-1]
        return [_parse_value(x) for x in body.split(",")] if body else []
    for kind in (int, float):
        try:
            return kind(text)
        except ValueError:
            pass
    return text


def comparison_metrics(result: ModeComparison) -> dict:
    return {
        "mse_overlap": result.mse_overlap,
        "mse_nonoverlap": result.mse_nonoverlap,
        "overlap_better": result.overlap_better,
        "mse_overlap_closed_loop": result.mse_overlap_closed_loop,
        "mse_nonoverlap_closed_loop": result.mse_nonoverlap_closed_loop,
        "mse_by_horizon": result.mse_by_horizon,
        "frames": result.frames,
        "seconds_per_frame_overlap": result.seconds_per_frame_overlap,
        "seconds_per_frame_nonoverlap": result.seconds_per_frame_nonoverlap,
    }
