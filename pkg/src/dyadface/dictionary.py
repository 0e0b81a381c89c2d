"""Affect-shape dictionary: two-level clustering of shape vectors and z sampling.

Level one splits standardized shape vectors into 8 k-means clusters, each
mapped to one affect class. Level two cuts every class into intensity
sub-clusters with Ward agglomeration under a minimum-size constraint.
Sampling walks through a class by hopping between near neighbours of the
previously chosen vector, which keeps generated sequences smooth.
"""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy.cluster.hierarchy import fcluster, linkage

from .corpus import N_AFFECT, AffectClass, Corpus, Standardizer, affect_argmax, trailing_aggregate
from .textio import LineReader, fmt_row, write_matrix, write_text


class CoverageError(ValueError):
    """Raised when some affect classes have too few frames to build a dictionary."""


# --- level one: k-means ---------------------------------------------------

@dataclass
class KMeansResult:
    assignments: np.ndarray
    centroids: np.ndarray
    wcss_history: list
    iterations: int
    converged: bool

    @property
    def wcss(self) -> float:
        return self.wcss_history[-1]


def _sq_dists(points, centroids):
    d2 = (points * points).sum(1)[:, None] - 2.0 * points @ centroids.T + (centroids * centroids).sum(1)[None]
    return np.maximum(d2, 0.0)


def _plus_plus(points, k, rng):
    n = len(points)
    centers = [int(rng.integers(n))]
    closest = _sq_dists(points, points[centers]).ravel()
    for _ in range(1, k):
        total = closest.sum()
        if total <= 0:
            # every point coincides with a center; take the lowest unused index
            used = set(centers)
            nxt = next(i for i in range(n) if i not in used)
        else:
            nxt = int(np.searchsorted(np.cumsum(closest), rng.random() * total, side="right"))
            nxt = min(nxt, n - 1)
        centers.append(nxt)
        closest = np.minimum(closest, _sq_dists(points, points[[nxt]]).ravel())
    return points[centers].copy()


def _wcss(points, assign, centroids):
    diff = points - centroids[assign]
    return float(np.sum(diff * diff))


def kmeans(points, k: int, seed: int = 0, max_iter: int = 300) -> KMeansResult:
    """Lloyd iterations from a k-means++ start until the assignment stops changing.

    An empty cluster is reseeded with the point farthest from its centroid.
    A point only changes cluster when the new centroid is strictly closer.
    """
    points = np.asarray(points, dtype=np.float64)
    if points.ndim != 2:
        raise ValueError("points must be a 2-D array")
    if k < 1:
        raise ValueError("k must be >= 1")
    if len(points) < k:
        raise ValueError(f"k-means needs at least k = {k} points, got {len(points)}")
    rng = np.random.default_rng(seed)
    centroids = _plus_plus(points, k, rng)
    assign = np.argmin(_sq_dists(points, centroids), axis=1)
    history = [_wcss(points, assign, centroids)]
    converged = False
    it = 0
    for it in range(1, max_iter + 1):
        for j in range(k):
            members = assign == j
            if members.any():
                centroids[j] = points[members].mean(axis=0)
            else:
                gap = np.sum((points - centroids[assign]) ** 2, axis=1)
                far = int(np.argmax(gap))
                centroids[j] = points[far]
                assign[far] = j
        history.append(_wcss(points, assign, centroids))
        dist = _sq_dists(points, centroids)
        new = np.argmin(dist, axis=1)
        # ties keep the current label, otherwise coincident centroids can cycle
        rows = np.arange(len(points))
        new = np.where(dist[rows, new] < dist[rows, assign], new, assign)
        if np.array_equal(new, assign):
            converged = True
            break
        assign = new
    return KMeansResult(assign, centroids, history, it, converged)


def best_kmeans(points, k: int, seed: int = 0, n_init: int = 4, max_iter: int = 300) -> KMeansResult:
    """Lowest-WCSS result over ``n_init`` restarts seeded ``seed``, ``seed + 1``, ..."""
    runs = [kmeans(points, k, seed + r, max_iter) for r in range(max(1, n_init))]
    return min(runs, key=lambda r: r.wcss)


def assign_affect_labels(assignments, frame_classes, k: int = N_AFFECT) -> dict[int, AffectClass]:
    """Bijective cluster -> class map, greedily taking the largest counts first.

    ``frame_classes`` holds the affect class observed at each clustered
    frame. Count ties go to the lower class index, then the lower cluster.
    """
    assignments = np.asarray(assignments, dtype=np.int64)
    frame_classes = np.asarray(frame_classes, dtype=np.int64)
    if assignments.shape != frame_classes.shape:
        raise ValueError("assignments and frame classes must align")
    if k > N_AFFECT:
        raise ValueError(f"at most {N_AFFECT} clusters can receive distinct classes")
    counts = np.zeros((k, N_AFFECT), dtype=np.int64)
    np.add.at(counts, (assignments, frame_classes), 1)
    order = sorted(((-counts[c, a], a, c) for c in range(k) for a in range(N_AFFECT)))
    mapping: dict[int, AffectClass] = {}
    used = set()
    for _, a, c in order:
        if c in mapping or a in used:
            continue
        mapping[c] = AffectClass(a)
        used.add(a)
    return mapping


# --- level two: agglomeration ---------------------------------------------

@dataclass
class SubCluster:
    members: np.ndarray  # raw shape vectors, (size, d)
    centroid: np.ndarray
    undersized: bool = False

    @property
    def size(self) -> int:
        return len(self.members)


def _relabel_by_first_member(labels):
    first = {}
    for i, lab in enumerate(labels):
        first.setdefault(lab, len(first))
    return np.array([first[lab] for lab in labels], dtype=np.int64)


def agglomerate_labels(points, min_size: int, max_k: int = 9, min_k: int = 3):
    """Ward cut labels for ``points`` and a flag that the points were too few.

    The cut uses the largest cluster count up to ``max_k`` whose clusters all
    reach ``min_size``. Labels are numbered by first appearance. ``min_k`` is
    a goal, not a floor: the size constraint wins when both cannot hold.
    """
    points = np.asarray(points, dtype=np.float64)
    if min_size < 1 or max_k < 1 or min_k < 1:
        raise ValueError("min_size, max_k and min_k must be >= 1")
    n = len(points)
    if n < max(min_size, 2) or n < 2 * min_size:
        return np.zeros(n, dtype=np.int64), n < min_size
    tree = linkage(points, method="ward", metric="euclidean")
    best = np.zeros(n, dtype=np.int64)
    found = 1
    for k in range(min(max_k, n // min_size), 1, -1):
        labels = fcluster(tree, t=k, criterion="maxclust")
        sizes = np.bincount(labels)[1:]
        if sizes[sizes > 0].min() >= min_size:
            best, found = _relabel_by_first_member(labels), k
            break
    if found < min_k and n >= min_k * min_size:
        absorbed = _absorbing_cut(points, tree, min_size, min_k, max_k)
        if absorbed is not None:
            best = absorbed
    return best, False


def _absorbing_cut(points, tree, min_size: int, min_k: int, max_k: int, search: int = 100):
    """Finest-needed cut with ``min_k`` clusters of ``min_size`` after absorbing small ones.

    Sparse outlying branches (frames in transit between classes) can block
    every plain cut. Here the smallest cut that holds at least ``min_k``
    (and at most ``max_k``) large clusters is taken, and members of smaller
    clusters join the nearest large centroid.
    """
    for k in range(min_k, min(search, len(points)) + 1):
        labels = fcluster(tree, t=k, criterion="maxclust")
        sizes = np.bincount(labels)
        big = [j for j in range(1, len(sizes)) if sizes[j] >= min_size]
        if len(big) > max_k:
            return None
        if len(big) < min_k:
            continue
        centroids = np.stack([points[labels == j].mean(axis=0) for j in big])
        small = ~np.isin(labels, big)
        if small.any():
            nearest = np.argmin(((points[small, None, :] - centroids[None]) ** 2).sum(-1), axis=1)
            labels = labels.copy()
            labels[small] = np.asarray(big)[nearest]
        return _relabel_by_first_member(labels)
    return None


def agglomerate(members, min_size: int, max_k: int = 9, min_k: int = 3) -> list[SubCluster]:
    """Split one class into size-constrained Ward sub-clusters (raw members kept)."""
    members = np.asarray(members, dtype=np.float64)
    labels, undersized = agglomerate_labels(members, min_size, max_k, min_k)
    out = []
    for j in range(int(labels.max(initial=-1)) + 1):
        rows = members[labels == j]
        out.append(SubCluster(rows, rows.mean(axis=0), undersized))
    return out


# --- dictionary -----------------------------------------------------------

@dataclass
class AffectCluster:
    class_id: AffectClass
    subclusters: list[SubCluster]

    @property
    def members(self) -> np.ndarray:
        return np.vstack([s.members for s in self.subclusters])

    @property
    def size(self) -> int:
        return sum(s.size for s in self.subclusters)

    @property
    def centroid(self) -> np.ndarray:
        return self.members.mean(axis=0)


@dataclass
class AffectShapeDictionary:
    clusters: list[AffectCluster]
    standardizer: Standardizer
    config: dict = field(default_factory=dict)
    _cache: dict = field(default_factory=dict, repr=False, compare=False)

    def __post_init__(self):
        if len(self.clusters) != N_AFFECT:
            raise ValueError(f"a dictionary has exactly {N_AFFECT} affect clusters")
        if [int(c.class_id) for c in self.clusters] != list(range(N_AFFECT)):
            raise ValueError("affect clusters must be ordered by class index")
        if np.any(self.standardizer.std <= 0):
            raise ValueError("standardization spreads must be positive")

    @property
    def d(self) -> int:
        return len(self.standardizer.mean)

    def n_members(self) -> int:
        return sum(c.size for c in self.clusters)

    def subcluster_counts(self) -> list[int]:
        return [len(c.subclusters) for c in self.clusters]

    def class_view(self, cls: int):
        """Cached (raw members, standardized members, subcluster index per member)."""
        cls = int(cls)
        if cls not in self._cache:
            cluster = self.clusters[cls]
            raw = cluster.members if cluster.subclusters else np.zeros((0, self.d))
            owner = np.concatenate([np.full(s.size, j) for j, s in enumerate(cluster.subclusters)] or [np.zeros(0)])
            self._cache[cls] = (raw, self.standardizer.transform(raw), owner.astype(np.int64))
        return self._cache[cls]

    def membership(self) -> dict[bytes, int]:
        """Map from the raw bytes of each member vector to its class index."""
        if "membership" not in self._cache:
            table = {}
            for c in self.clusters:
                for s in c.subclusters:
                    for row in s.members:
                        table[np.ascontiguousarray(row).tobytes()] = int(c.class_id)
            self._cache["membership"] = table
        return self._cache["membership"]

    def classify_members(self, shapes) -> np.ndarray:
        """Class index of each row of ``shapes`` that is a stored member, else -1."""
        table = self.membership()
        return np.array([table.get(np.ascontiguousarray(r, dtype=np.float64).tobytes(), -1)
                         for r in np.asarray(shapes, dtype=np.float64)], dtype=np.int64)

    def intensity_order(self, cls: int) -> list[int]:
        """Sub-cluster indices of ``cls`` sorted by distance from the Neutral centroid."""
        neutral = self.standardizer.transform(self.clusters[AffectClass.NEUTRAL].centroid)
        dist = [float(np.linalg.norm(self.standardizer.transform(s.centroid) - neutral))
                for s in self.clusters[int(cls)].subclusters]
        return sorted(range(len(dist)), key=lambda j: (dist[j], j))


def frame_affect_classes(corpus: Corpus, affect_window: int) -> np.ndarray:
    """Class of the trailing-window aggregate affect at every corpus frame."""
    out = []
    for seq in corpus.sequences:
        agg = trailing_aggregate(seq.affect, affect_window)
        out.append(np.argmax(agg, axis=1) if len(agg) else np.zeros(0, dtype=np.int64))
    return np.concatenate(out).astype(np.int64) if out else np.zeros(0, dtype=np.int64)


def canonical_order(shapes, classes) -> np.ndarray:
    """Frame order that depends only on frame contents (lexicographic on the vector)."""
    keys = [np.asarray(classes)] + [shapes[:, j] for j in range(shapes.shape[1] - 1, -1, -1)]
    return np.lexsort(keys)


def build_dictionary(corpus: Corpus, min_size: int = 100, seed: int = 0, affect_window: int = 15,
                     max_k: int = 9, min_k: int = 3, n_init: int = 4) -> AffectShapeDictionary:
    """Standardize, k-means into 8 clusters, label them, then split each class.

    Frames are put in a content-defined order first, so the result does not
    depend on how the corpus lists its sequences or frames.
    """
    if min_size < 1:
        raise ValueError("min_size must be >= 1")
    _, shapes, _ = corpus.stacked()
    observed = frame_affect_classes(corpus, affect_window)
    counts = np.bincount(observed, minlength=N_AFFECT)
    deficient = [f"{AffectClass(c).name.lower()} ({counts[c]})" for c in range(N_AFFECT) if counts[c] < min_size]
    if deficient:
        raise CoverageError(f"classes with fewer than {min_size} frames: " + ", ".join(deficient))
    order = canonical_order(shapes, observed)
    shapes, observed = shapes[order], observed[order]
    std = Standardizer.fit(shapes)
    points = std.transform(shapes)
    km = best_kmeans(points, N_AFFECT, seed, n_init)
    mapping = assign_affect_labels(km.assignments, observed)
    clusters = []
    for cls in range(N_AFFECT):
        cluster_id = next(c for c, a in mapping.items() if a == cls)
        rows = km.assignments == cluster_id
        labels, undersized = agglomerate_labels(points[rows], min_size, max_k, min_k)
        raw = shapes[rows]
        subs = []
        for j in range(int(labels.max(initial=-1)) + 1):
            part = raw[labels == j]
            subs.append(SubCluster(part, part.mean(axis=0), undersized))
        clusters.append(AffectCluster(AffectClass(cls), subs))
    config = {"min_size": min_size, "seed": seed, "affect_window": affect_window, "max_k": max_k,
              "min_k": min_k, "n_init": n_init, "kmeans_iterations": km.iterations}
    return AffectShapeDictionary(clusters, std, config)


# --- sampling -------------------------------------------------------------

@dataclass
class SampleInfo:
    class_id: AffectClass
    subcluster: int
    member: int
    candidates: np.ndarray


def sample_z(dictionary: AffectShapeDictionary, affect, prev_z=None, rng=None, top_k: int = 5,
             return_info: bool = False):
    """Draw a raw shape vector for ``affect``.

    Without ``prev_z`` the draw is uniform over the sub-cluster nearest the
    class centroid. With ``prev_z`` it is uniform over the ``top_k`` class
    members closest to it (standardized euclidean distance, ties to the
    lower member index).
    """
    if top_k < 1:
        raise ValueError("top_k must be >= 1")
    rng = rng if rng is not None else np.random.default_rng()
    cls = affect_argmax(np.asarray(affect, dtype=np.float64))
    raw, scaled, owner = dictionary.class_view(cls)
    if len(raw) == 0:
        raise ValueError(f"class {cls.name.lower()} has no members")
    if prev_z is None:
        center = scaled.mean(axis=0)
        subs = dictionary.clusters[cls].subclusters
        gaps = [np.linalg.norm(dictionary.standardizer.transform(s.centroid) - center) for s in subs]
        j = int(np.argmin(gaps))
        candidates = np.flatnonzero(owner == j)
    else:
        target = dictionary.standardizer.transform(np.asarray(prev_z, dtype=np.float64).reshape(dictionary.d))
        dist = np.sum((scaled - target) ** 2, axis=1)
        kk = min(top_k, len(dist))
        candidates = np.sort(np.argsort(dist, kind="stable")[:kk])
    member = int(candidates[int(rng.integers(len(candidates)))])
    z = raw[member].copy()
    if return_info:
        return z, SampleInfo(cls, int(owner[member]), member, candidates)
    return z


def generate_sequence(dictionary: AffectShapeDictionary, affect_stream, rng=None, top_k: int = 5,
                      prev_z=None) -> np.ndarray:
    """Chain ``sample_z`` over an affect stream; returns (steps, d) raw vectors."""
    stream = np.asarray(affect_stream, dtype=np.float64).reshape(-1, N_AFFECT)
    rng = rng if rng is not None else np.random.default_rng()
    out = np.zeros((len(stream), dictionary.d))
    for t, affect in enumerate(stream):
        prev_z = sample_z(dictionary, affect, prev_z, rng, top_k)
        out[t] = prev_z
    return out


# --- file format ----------------------------------------------------------

def save_dictionary(dictionary: AffectShapeDictionary, path) -> None:
    lines = ["DICT v1", " ".join(f"{k}={v}" for k, v in dictionary.config.items()),
             f"d {dictionary.d}", fmt_row(dictionary.standardizer.mean), fmt_row(dictionary.standardizer.std)]
    for c in dictionary.clusters:
        lines.append(f"class {int(c.class_id)} {len(c.subclusters)}")
        for s in c.subclusters:
            lines.append(f"sub {s.size} {int(s.undersized)}")
            lines.append(fmt_row(s.centroid))
            write_matrix(lines, s.members)
    write_text(path, lines)


def load_dictionary(path) -> AffectShapeDictionary:
    rd = LineReader(path)
    rd.expect("DICT v1")
    config = {}
    for key, value in rd.keyvalues().items():
        try:
            config[key] = int(value)
        except ValueError:
            config[key] = value
    head = rd.next().split()
    if len(head) != 2 or head[0] != "d" or not head[1].isdigit():
        raise rd.error("expected 'd <dimension>'")
    d = int(head[1])
    std = Standardizer(rd.floats(d), rd.floats(d))
    clusters = []
    for cls in range(N_AFFECT):
        head = rd.next().split()
        if len(head) != 3 or head[0] != "class" or head[1] != str(cls) or not head[2].isdigit():
            raise rd.error(f"expected 'class {cls} <subcluster count>'")
        subs = []
        for _ in range(int(head[2])):
            sub = rd.next().split()
            if len(sub) != 3 or sub[0] != "sub" or not sub[1].isdigit() or sub[2] not in ("0", "1"):
                raise rd.error("expected 'sub <size> <undersized flag>'")
            centroid = rd.floats(d)
            members = rd.matrix(int(sub[1]), d)
            subs.append(SubCluster(members, centroid, sub[2] == "1"))
        clusters.append(AffectCluster(AffectClass(cls), subs))
    if not rd.at_end():
        rd.next()
        raise rd.error("unexpected trailing data")
    try:
        return AffectShapeDictionary(clusters, std, config)
    except ValueError as exc:
        raise rd.error(str(exc)) from None
