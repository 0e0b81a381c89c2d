"""Point distribution model: a mean 3D face plus a linear deformation basis.

A face is placed in the image with a weak-perspective camera::

    x_i = s * R_2D @ (mean_i + basis_i @ q) + t

where ``R_2D`` is the top two rows of the 3x3 rotation composed from
(pitch, yaw, roll). Rigid and non-rigid parameters are flattened in the
fixed order ``(s, pitch, yaw, roll, tx, ty, q_1 .. q_m)``.
"""
from __future__ import annotations

import warnings
from dataclasses import dataclass, field

import numpy as np

from .template import N_LANDMARKS
from .textio import LineReader, fmt_row, write_matrix, write_text

RIGID_DIM = 6
ORTHO_TOL = 1e-8
# prior weight on sum q_j^2 / var_j; larger values bias the scale estimate
DEFAULT_REG = 1e-6


class DegenerateDataError(ValueError):
    pass


@dataclass
class ShapeParams:
    scale: float
    rotation: np.ndarray
    translation: np.ndarray
    q: np.ndarray

    def __post_init__(self):
        self.scale = float(self.scale)
        self.rotation = np.asarray(self.rotation, dtype=np.float64).reshape(3)
        self.translation = np.asarray(self.translation, dtype=np.float64).reshape(2)
        self.q = np.asarray(self.q, dtype=np.float64).reshape(-1)

    @property
    def dim(self) -> int:
        return RIGID_DIM + self.q.size

    def flatten(self) -> np.ndarray:
        return np.concatenate([[self.scale], self.rotation, self.translation, self.q])

    @classmethod
    def from_flat(cls, vec) -> "ShapeParams":
        vec = np.asarray(vec, dtype=np.float64).reshape(-1)
        if vec.size < RIGID_DIM:
            raise ValueError(f"flattened shape vector needs at least {RIGID_DIM} entries")
        return cls(vec[0], vec[1:4], vec[4:6], vec[6:])


def as_flat(params) -> np.ndarray:
    if isinstance(params, ShapeParams):
        return params.flatten()
    return np.asarray(params, dtype=np.float64).reshape(-1)


@dataclass(frozen=True, eq=False)
class PDMModel:
    mean_shape: np.ndarray
    basis: np.ndarray
    variances: np.ndarray

    def __post_init__(self):
        mean = np.array(self.mean_shape, dtype=np.float64)
        basis = np.array(self.basis, dtype=np.float64)
        var = np.array(self.variances, dtype=np.float64).reshape(-1)
        if mean.shape != (N_LANDMARKS, 3):
            raise ValueError(f"mean shape must be ({N_LANDMARKS}, 3), got {mean.shape}")
        if basis.ndim != 2 or basis.shape[0] != 3 * N_LANDMARKS or basis.shape[1] < 1:
            raise ValueError(f"basis must be ({3 * N_LANDMARKS}, m), got {basis.shape}")
        if var.size != basis.shape[1]:
            raise ValueError("one variance per basis column is required")
        if not (np.all(np.isfinite(mean)) and np.all(np.isfinite(basis)) and np.all(np.isfinite(var))):
            raise ValueError("PDM contains non-finite values")
        gram = basis.T @ basis
        if np.max(np.abs(gram - np.eye(var.size))) > ORTHO_TOL:
            raise ValueError("basis columns are not orthonormal")
        if np.any(var <= 0) or np.any(np.diff(var) > 0):
            raise ValueError("variances must be positive and sorted descending")
        for arr in (mean, basis, var):
            arr.setflags(write=False)
        object.__setattr__(self, "mean_shape", mean)
        object.__setattr__(self, "basis", basis)
        object.__setattr__(self, "variances", var)

    @property
    def m(self) -> int:
        return self.basis.shape[1]

    @property
    def dim(self) -> int:
        return RIGID_DIM + self.m


def neutral_params(pdm: PDMModel) -> ShapeParams:
    return ShapeParams(1.0, np.zeros(3), np.zeros(2), np.zeros(pdm.m))


def _axis_rotations(pitch, yaw, roll):
    cp, sp = np.cos(pitch), np.sin(pitch)
    cy, sy = np.cos(yaw), np.sin(yaw)
    cr, sr = np.cos(roll), np.sin(roll)
    rx = np.array([[1, 0, 0], [0, cp, -sp], [0, sp, cp]])
    ry = np.array([[cy, 0, sy], [0, 1, 0], [-sy, 0, cy]])
    rz = np.array([[cr, -sr, 0], [sr, cr, 0], [0, 0, 1]])
    drx = np.array([[0, 0, 0], [0, -sp, -cp], [0, cp, -sp]])
    dry = np.array([[-sy, 0, cy], [0, 0, 0], [-cy, 0, -sy]])
    drz = np.array([[-sr, -cr, 0], [cr, -sr, 0], [0, 0, 0]])
    return (rx, ry, rz), (drx, dry, drz)


def rotation_matrix(pitch: float, yaw: float, roll: float) -> np.ndarray:
    """Intrinsic pitch -> yaw -> roll rotation (R = Rx @ Ry @ Rz)."""
    (rx, ry, rz), _ = _axis_rotations(pitch, yaw, roll)
    return rx @ ry @ rz


def wrap_angles(angles):
    """Map angles into (-pi, pi]."""
    a = np.asarray(angles, dtype=np.float64)
    return np.pi - np.mod(np.pi - a, 2 * np.pi)


def canonical_angles(angles) -> np.ndarray:
    """Pick the Euler triple with |yaw| <= pi/2 among the two describing one rotation.

    (pitch, yaw, roll) and (pitch + pi, pi - yaw, roll + pi) compose to the
    same matrix.
    """
    a = wrap_angles(angles)
    if abs(a[1]) > np.pi / 2:
        a = wrap_angles([a[0] + np.pi, np.pi - a[1], a[2] + np.pi])
    return a


def canonical_pose(vec) -> np.ndarray:
    """Resolve the weak-perspective sign alias so that scale is positive.

    Negating s is the same projection as (-pitch, -yaw, roll + pi).
    """
    vec = np.array(vec, dtype=np.float64)
    if vec[0] < 0:
        vec[0] = -vec[0]
        vec[1:4] = [-vec[1], -vec[2], vec[3] + np.pi]
    vec[1:4] = canonical_angles(vec[1:4])
    return vec


def shape_3d(pdm: PDMModel, q) -> np.ndarray:
    return pdm.mean_shape + (pdm.basis @ np.asarray(q, dtype=np.float64)).reshape(N_LANDMARKS, 3)


def project(pdm: PDMModel, params) -> np.ndarray:
    """Place the model in the image; returns (68, 2) landmarks."""
    vec = as_flat(params)
    if vec.size != pdm.dim:
        raise ValueError(f"shape vector has dimension {vec.size}, PDM expects {pdm.dim}")
    rot = rotation_matrix(*vec[1:4])
    pts = shape_3d(pdm, vec[RIGID_DIM:])
    return vec[0] * pts @ rot[:2].T + vec[4:6]


def project_many(pdm: PDMModel, vectors) -> np.ndarray:
    """Project a stack of flattened shape vectors; returns (N, 68, 2)."""
    vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
    return np.stack([project(pdm, v) for v in vectors]) if len(vectors) else np.zeros((0, N_LANDMARKS, 2))


def _jacobian(pdm: PDMModel, vec: np.ndarray) -> np.ndarray:
    s = vec[0]
    (rx, ry, rz), (drx, dry, drz) = _axis_rotations(*vec[1:4])
    rot = rx @ ry @ rz
    d_rot = (drx @ ry @ rz, rx @ dry @ rz, rx @ ry @ drz)
    pts = shape_3d(pdm, vec[RIGID_DIM:])
    jac = np.zeros((N_LANDMARKS, 2, pdm.dim))
    jac[:, :, 0] = pts @ rot[:2].T
    for k in range(3):
        jac[:, :, 1 + k] = s * pts @ d_rot[k][:2].T
    jac[:, 0, 4] = 1.0
    jac[:, 1, 5] = 1.0
    basis = pdm.basis.reshape(N_LANDMARKS, 3, pdm.m)
    jac[:, :, RIGID_DIM:] = s * np.einsum("ab,ibj->iaj", rot[:2], basis)
    return jac.reshape(2 * N_LANDMARKS, pdm.dim)


@dataclass
class FitResult:
    params: ShapeParams
    objective: float
    residual: float
    iterations: int
    converged: bool
    history: list = field(default_factory=list)


def _similarity_init(pdm: PDMModel, observed: np.ndarray) -> np.ndarray:
    """Closed-form 2D similarity from the mean face to the observation."""
    src = pdm.mean_shape[:, :2]
    mu_s, mu_o = src.mean(axis=0), observed.mean(axis=0)
    a, b = src - mu_s, observed - mu_o
    denom = np.sum(a * a)
    c = np.sum(a * b) / denom
    d = np.sum(a[:, 0] * b[:, 1] - a[:, 1] * b[:, 0]) / denom
    scale = np.hypot(c, d)
    roll = np.arctan2(d, c)
    vec = np.zeros(pdm.dim)
    vec[0], vec[3] = scale, roll
    rot = rotation_matrix(0.0, 0.0, roll)[:2, :2]
    vec[4:6] = mu_o - scale * rot @ mu_s
    return vec


def _solve(pdm: PDMModel, target: np.ndarray, vec: np.ndarray, reg_w: np.ndarray,
           max_iter: int, step_tol: float):
    def residuals(v):
        return np.concatenate([project(pdm, v).ravel() - target, reg_w * v[RIGID_DIM:]])

    reg_block = np.hstack([np.zeros((pdm.m, RIGID_DIM)), np.diag(reg_w)])
    r = residuals(vec)
    obj = float(r @ r)
    history = [obj]
    mu = 1e-3
    converged = False
    it = 0
    while it < max_iter:
        it += 1
        jac = np.vstack([_jacobian(pdm, vec), reg_block])
        hess = jac.T @ jac
        grad = jac.T @ r
        diag = np.maximum(np.diag(hess), 1e-12 * max(np.max(np.diag(hess)), 1.0))
        accepted = False
        while mu <= 1e20:
            try:
                step = -np.linalg.solve(hess + mu * np.diag(diag), grad)
            except np.linalg.LinAlgError:
                mu *= 10.0
                continue
            cand = vec + step
            r_new = residuals(cand)
            obj_new = float(r_new @ r_new)
            if obj_new <= obj:
                accepted = True
                break
            mu *= 10.0
        if not accepted:
            # no descent direction left at machine precision
            converged = True
            break
        vec, r, obj = cand, r_new, obj_new
        history.append(obj)
        mu = max(mu / 10.0, 1e-12)
        if np.linalg.norm(step) < step_tol:
            converged = True
            break
    return vec, obj, it, converged, history


def fit_report(pdm: PDMModel, observed, init=None, reg: float = DEFAULT_REG,
               max_iter: int = 100, step_tol: float = 1e-9) -> FitResult:
    """Damped Gauss-Newton (Levenberg-Marquardt) fit of shape parameters.

    Minimizes ``sum ||project_i(p) - observed_i||^2 + reg * sum q_j^2 / var_j``.
    The iteration is started from ``init`` (if given) and from a closed-form
    2D similarity alignment of the mean face; the lower objective wins.
    """
    observed = np.asarray(observed, dtype=np.float64)
    if observed.shape != (N_LANDMARKS, 2):
        raise ValueError(f"observed landmarks must be ({N_LANDMARKS}, 2)")
    if not np.all(np.isfinite(observed)):
        raise ValueError("observed landmarks contain NaN or infinite values")
    starts = []
    if init is not None:
        start = as_flat(init).copy()
        if start.size != pdm.dim:
            raise ValueError("init dimension does not match the PDM")
        starts.append(start)
    aligned = _similarity_init(pdm, observed)
    if init is not None:
        aligned[1:3] = starts[0][1:3]
        aligned[RIGID_DIM:] = starts[0][RIGID_DIM:]
    starts.append(aligned)

    reg_w = np.sqrt(reg / pdm.variances)
    target = observed.ravel()
    best = None
    for start in starts:
        out = _solve(pdm, target, start, reg_w, max_iter, step_tol)
        if best is None or out[1] < best[1]:
            best = out
    vec, obj, it, converged, history = best
    vec = canonical_pose(vec)
    data_res = project(pdm, vec) - observed
    return FitResult(ShapeParams.from_flat(vec), obj, float(np.sum(data_res ** 2)), it, converged, history)


def fit(pdm: PDMModel, observed, init=None, reg: float = DEFAULT_REG) -> ShapeParams:
    result = fit_report(pdm, observed, init=init, reg=reg)
    if not result.converged:
        warnings.warn(
            f"PDM fit did not converge in {result.iterations} iterations "
            f"(residual {result.residual:.3g}); returning best estimate",
            RuntimeWarning,
            stacklevel=2,
        )
    return result.params


def _kabsch(x: np.ndarray, ref: np.ndarray) -> np.ndarray:
    """Rotate centered points x onto centered ref (rotation only)."""
    u, _, vt = np.linalg.svd(x.T @ ref)
    d = np.sign(np.linalg.det(u @ vt)) or 1.0
    fix = np.diag([1.0, 1.0, d])
    return x @ (u @ fix @ vt)


def procrustes_align(shapes, tol: float = 1e-8, max_iter: int = 100) -> np.ndarray:
    """Generalized Procrustes alignment (translation, rotation, scale).

    Shapes are normalized to unit centroid size for alignment and rescaled
    by the mean input size afterwards so the result keeps input units.
    """
    shapes = np.asarray(shapes, dtype=np.float64)
    centered = shapes - shapes.mean(axis=1, keepdims=True)
    sizes = np.linalg.norm(centered, axis=(1, 2))
    if np.any(sizes <= 0):
        raise DegenerateDataError("a shape collapses to a single point")
    unit = centered / sizes[:, None, None]
    ref = unit[0]
    aligned = unit
    for _ in range(max_iter):
        aligned = np.stack([_kabsch(x, ref) for x in unit])
        mean = aligned.mean(axis=0)
        mean /= np.linalg.norm(mean)
        mean = _kabsch(mean, ref)
        done = np.linalg.norm(mean - ref) < tol
        ref = mean
        if done:
            break
    return aligned * sizes.mean()


def build_pdm(shapes, m: int) -> PDMModel:
    """Procrustes-align 3D shapes and keep the top-m principal directions."""
    shapes = np.asarray(shapes, dtype=np.float64)
    if m < 1:
        raise ValueError("rank m must be at least 1")
    if shapes.ndim != 3 or shapes.shape[1:] != (N_LANDMARKS, 3):
        raise ValueError(f"shapes must be (N, {N_LANDMARKS}, 3)")
    if len(shapes) < m + 1:
        raise ValueError(f"need at least m + 1 = {m + 1} shapes, got {len(shapes)}")
    aligned = procrustes_align(shapes)
    mean = aligned.mean(axis=0)
    dev = aligned.reshape(len(aligned), -1) - mean.ravel()
    _, sing, vt = np.linalg.svd(dev, full_matrices=False)
    var = sing ** 2 / len(aligned)
    total = float(np.sum(var))
    scale = float(np.sum(mean ** 2))
    if total <= 1e-24 * max(scale, 1.0):
        raise DegenerateDataError("shapes have zero variance after alignment")
    if len(var) < m or var[m - 1] <= 1e-15 * total:
        raise DegenerateDataError(f"data supports fewer than {m} non-degenerate components")
    basis = vt[:m].T.copy()
    flip = np.sign(basis[np.argmax(np.abs(basis), axis=0), np.arange(m)])
    basis *= flip
    return PDMModel(mean, basis, var[:m].copy())


def reconstruction_error(pdm: PDMModel, shapes) -> float:
    """Mean squared residual of aligned shapes after projection onto the basis."""
    shapes = np.asarray(shapes, dtype=np.float64)
    errs = []
    ref = pdm.mean_shape - pdm.mean_shape.mean(axis=0)
    ref_size = np.linalg.norm(ref)
    for x in shapes:
        x = x - x.mean(axis=0)
        x = _kabsch(x / np.linalg.norm(x), ref / ref_size) * ref_size
        dev = (x - pdm.mean_shape).ravel()
        res = dev - pdm.basis @ (pdm.basis.T @ dev)
        errs.append(res @ res)
    return float(np.mean(errs))


def save_pdm(pdm: PDMModel, path) -> None:
    lines = ["PDM v1", str(pdm.m)]
    write_matrix(lines, pdm.mean_shape)
    write_matrix(lines, pdm.basis)
    lines.append(fmt_row(pdm.variances))
    write_text(path, lines)


def load_pdm(path) -> PDMModel:
    rd = LineReader(path)
    rd.expect("PDM v1")
    m = rd.int()
    if m < 1:
        raise rd.error("rank must be positive")
    mean = rd.matrix(N_LANDMARKS, 3)
    basis = rd.matrix(3 * N_LANDMARKS, m)
    var = rd.floats(m)
    try:
        return PDMModel(mean, basis, var)
    except ValueError as exc:
        raise rd.error(str(exc)) from None
