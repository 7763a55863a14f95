"""Two-view geometry: linearisation, eight-point estimation and evaluation metrics."""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.spatial.transform import Rotation
from scipy.stats import rankdata

from .errors import DegeneracyError, UndefinedMetricError
from .influence import LinearizedProblem

#: Sum of the two point-to-epipolar-line distances below which a match is an inlier.
LABEL_THRESHOLD_PX = 6.0

#: NSGD below this value counts as an accurate estimate.
NSGD_ACCURATE = 0.05

#: Rounds of inlier noise redraws in :func:`synthesize_scene`.
MAX_NOISE_REDRAWS = 100


@dataclass(frozen=True)
class Correspondences:
    """``N`` matches ``u[i] <-> u_prime[i]`` in pixel coordinates.

    ``labels`` (optional) holds ground truth with 1 = inlier, 0 = outlier.
    """

    u: np.ndarray
    u_prime: np.ndarray
    labels: np.ndarray | None = None

    def __post_init__(self):
        u = np.asarray(self.u, dtype=float).reshape(-1, 2)
        up = np.asarray(self.u_prime, dtype=float).reshape(-1, 2)
        if u.shape != up.shape:
            raise ValueError("both views need the same number of points")
        if not (np.all(np.isfinite(u)) and np.all(np.isfinite(up))):
            raise ValueError("correspondence coordinates must be finite")
        object.__setattr__(self, "u", u)
        object.__setattr__(self, "u_prime", up)
        if self.labels is not None:
            lab = np.asarray(self.labels).astype(np.int8).reshape(-1)
            if lab.size != u.shape[0]:
                raise ValueError("labels length must equal the correspondence count")
            object.__setattr__(self, "labels", lab)

    def __len__(self) -> int:
        return self.u.shape[0]

    def subset(self, idx) -> "Correspondences":
        lab = None if self.labels is None else self.labels[idx]
        return Correspondences(self.u[idx], self.u_prime[idx], lab)

    @property
    def outlier_flags(self) -> np.ndarray | None:
        return None if self.labels is None else (self.labels == 0).astype(np.int8)


@dataclass(frozen=True)
class SceneGroundTruth:
    F: np.ndarray
    labels: np.ndarray
    width: float
    height: float


def homogeneous(points: np.ndarray) -> np.ndarray:
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    return np.hstack([points, np.ones((points.shape[0], 1))])


def normalize_fundamental(F: np.ndarray) -> np.ndarray:
    """Unit Frobenius norm, first non-negligible entry positive."""
    F = np.asarray(F, dtype=float)
    n = np.linalg.norm(F)
    if n == 0:
        raise DegeneracyError("zero matrix")
    F = F / n
    flat = F.reshape(-1)
    lead = flat[np.flatnonzero(np.abs(flat) > 1e-12)[0]]
    return F if lead > 0 else -F


def enforce_rank2(F: np.ndarray) -> np.ndarray:
    U, S, Vt = np.linalg.svd(F)
    S[2] = 0.0
    return U @ np.diag(S) @ Vt


def hartley_transform(points: np.ndarray) -> np.ndarray:
    """Similarity moving the centroid to 0 and the mean distance to sqrt(2)."""
    points = np.asarray(points, dtype=float).reshape(-1, 2)
    c = points.mean(axis=0)
    d = np.linalg.norm(points - c, axis=1).mean()
    if d < 1e-12:
        raise DegeneracyError("all points coincide")
    s = np.sqrt(2) / d
    return np.array([[s, 0, -s * c[0]], [0, s, -s * c[1]], [0, 0, 1.0]])


def transform_points(T: np.ndarray, points: np.ndarray) -> np.ndarray:
    ph = homogeneous(points) @ T.T
    return ph[:, :2] / ph[:, 2:3]


def _design_rows(u: np.ndarray, up: np.ndarray) -> np.ndarray:
    x, y = u[:, 0], u[:, 1]
    xp, yp = up[:, 0], up[:, 1]
    one = np.ones_like(x)
    return np.column_stack([xp * x, xp * y, xp, yp * x, yp * y, yp, x, y, one])


def linearize(corrs: Correspondences) -> LinearizedProblem:
    """Dehomogenised epipolar constraint with ``F[0,0]`` fixed to 1.

    Row ``i`` is ``a = [u'v, u', v'u, v'v, v', u, v, 1]`` and ``b = -u'u``.
    """
    if len(corrs) == 0:
        raise ValueError("need at least one correspondence")
    full = _design_rows(corrs.u, corrs.u_prime)
    return LinearizedProblem(full[:, 1:], -full[:, 0])


def fundamental_to_model(F: np.ndarray) -> np.ndarray:
    """The 8 remaining entries of ``F / F[0,0]`` in row-major order."""
    F = np.asarray(F, dtype=float)
    if abs(F[0, 0]) < 1e-15 * max(np.linalg.norm(F), 1e-300):
        raise DegeneracyError("F[0,0] is zero; the model cannot be dehomogenised")
    return (F / F[0, 0]).reshape(-1)[1:]


def model_to_fundamental(x: np.ndarray) -> np.ndarray:
    return np.concatenate([[1.0], np.asarray(x, dtype=float).reshape(-1)]).reshape(3, 3)


def linear_residual(problem: LinearizedProblem, x: np.ndarray) -> np.ndarray:
    """``|a_i . x - b_i|`` for every row."""
    return problem.residuals(x)


def eight_point(corrs: Correspondences) -> np.ndarray:
    """Normalised eight-point estimate of ``F`` (rank 2, unit Frobenius norm)."""
    n = len(corrs)
    if n < 8:
        raise ValueError(f"eight-point needs at least 8 correspondences, got {n}")
    T1 = hartley_transform(corrs.u)
    T2 = hartley_transform(corrs.u_prime)
    A = _design_rows(transform_points(T1, corrs.u), transform_points(T2, corrs.u_prime))
    _, s, Vt = np.linalg.svd(A, full_matrices=True)
    if s[7] <= 1e-10 * s[0]:
        raise DegeneracyError("design matrix has rank below 8")
    Fn = enforce_rank2(Vt[-1].reshape(3, 3))
    return normalize_fundamental(T2.T @ Fn @ T1)


def _point_line_distance(points_h: np.ndarray, lines: np.ndarray) -> np.ndarray:
    norm = np.hypot(lines[:, 0], lines[:, 1])
    num = np.abs(np.sum(points_h * lines, axis=1))
    with np.errstate(divide="ignore", invalid="ignore"):
        d = num / norm
    return np.where(norm > 0, d, np.inf)


def epipolar_distance_sum(F: np.ndarray, u: np.ndarray, u_prime: np.ndarray) -> np.ndarray:
    """``d(u', F u) + d(u, F^T u')`` in pixels; ``inf`` where a line degenerates."""
    F = np.asarray(F, dtype=float)
    if not np.any(F):
        raise ValueError("F must be nonzero")
    uh, uph = homogeneous(u), homogeneous(u_prime)
    return _point_line_distance(uph, uh @ F.T) + _point_line_distance(uh, uph @ F)


def label_by_epipolar_distance(F: np.ndarray, corrs: Correspondences,
                               threshold: float = LABEL_THRESHOLD_PX) -> np.ndarray:
    return (epipolar_distance_sum(F, corrs.u, corrs.u_prime) <= threshold).astype(np.int8)


def _closest_on_lines(points: np.ndarray, lines: np.ndarray) -> np.ndarray:
    a, b, c = lines[:, 0], lines[:, 1], lines[:, 2]
    k = (a * points[:, 0] + b * points[:, 1] + c) / (a * a + b * b)
    return points - np.column_stack([a * k, b * k])


def _sgd_one_way(F_src, F_eval, width, height, n, rng) -> float:
    # virtual matches exact under F_src, scored against F_eval
    u = rng.uniform([0, 0], [width, height], size=(n, 2))
    guess = rng.uniform([0, 0], [width, height], size=(n, 2))
    lines = homogeneous(u) @ F_src.T
    ok = np.hypot(lines[:, 0], lines[:, 1]) > 1e-12
    up = _closest_on_lines(guess[ok], lines[ok])
    uh, uph = homogeneous(u[ok]), homogeneous(up)
    d = 0.5 * (_point_line_distance(uph, uh @ F_eval.T) + _point_line_distance(uh, uph @ F_eval))
    return float(np.mean(d))


def sgd(F_est, F_gt, width, height, num_virtual: int = 1000, seed: int = 0) -> float:
    """Symmetric geometric distance in pixels between two fundamental matrices.

    Virtual correspondences are drawn uniformly in the first image and
    matched to the closest point on their epipolar line in the second; each
    is scored by the mean of its two point-to-line distances under the other
    matrix.  Both directions are averaged.
    """
    F_est = np.asarray(F_est, float)
    F_gt = np.asarray(F_gt, float)
    if not np.any(F_est) or not np.any(F_gt):
        raise ValueError("both matrices must be nonzero")
    F_est = F_est / np.linalg.norm(F_est)
    F_gt = F_gt / np.linalg.norm(F_gt)
    rng = np.random.default_rng(seed)
    fwd = _sgd_one_way(F_gt, F_est, width, height, num_virtual, rng)
    bwd = _sgd_one_way(F_est, F_gt, width, height, num_virtual, rng)
    return 0.5 * (fwd + bwd)


def nsgd(F_est, F_gt, width, height, num_virtual: int = 1000, seed: int = 0) -> float:
    """SGD divided by the image diagonal; below 0.05 counts as accurate."""
    return sgd(F_est, F_gt, width, height, num_virtual, seed) / float(np.hypot(width, height))


def roc_auc(scores, labels) -> float:
    """Probability that a positive outranks a negative, ties counted half."""
    scores = np.asarray(scores, dtype=float).reshape(-1)
    labels = np.asarray(labels).astype(bool).reshape(-1)
    if scores.size != labels.size:
        raise ValueError("scores and labels differ in length")
    n_pos = int(labels.sum())
    n_neg = labels.size - n_pos
    if n_pos == 0 or n_neg == 0:
        raise UndefinedMetricError("ROC AUC needs both classes")
    ranks = rankdata(scores)
    u = ranks[labels].sum() - n_pos * (n_pos + 1) / 2
    return float(u / (n_pos * n_neg))


def _cross(t: np.ndarray) -> np.ndarray:
    return np.array([[0, -t[2], t[1]], [t[2], 0, -t[0]], [-t[1], t[0], 0]])


def synthesize_scene(
    num_points: int = 100,
    outlier_fraction: float = 0.3,
    noise_px: float = 0.5,
    width: float = 640.0,
    height: float = 480.0,
    seed: int = 0,
) -> tuple[Correspondences, SceneGroundTruth]:
    """Random two-view scene with known ``F`` and 6-pixel-rule labels.

    Inliers are projections of random 3-D points seen by both cameras with
    Gaussian pixel noise, redrawn where it would break the 6-pixel rule;
    outliers are independent uniform points in each image.
    """
    if not 0 <= outlier_fraction <= 1:
        raise ValueError("outlier_fraction must lie in [0, 1]")
    if num_points < 1:
        raise ValueError("need at least one point")
    rng = np.random.default_rng(seed)
    f1, f2 = rng.uniform(0.8, 1.2, size=2) * width
    c1 = np.array([width, height]) / 2 + rng.uniform(-0.05, 0.05, size=2) * width
    c2 = np.array([width, height]) / 2 + rng.uniform(-0.05, 0.05, size=2) * width
    K1 = np.array([[f1, 0, c1[0]], [0, f1, c1[1]], [0, 0, 1]])
    K2 = np.array([[f2, 0, c2[0]], [0, f2, c2[1]], [0, 0, 1]])
    # second camera: displaced, looking back at the scene centre, with roll
    depth = rng.uniform(6.0, 10.0)
    target = np.array([0.0, 0.0, depth])
    direction = rng.normal(size=3)
    centre = direction / np.linalg.norm(direction) * rng.uniform(1.0, 3.0)
    fwd = (target - centre) / np.linalg.norm(target - centre)
    right = np.cross([0.0, 1.0, 0.0], fwd)
    right /= np.linalg.norm(right)
    down = np.cross(fwd, right)
    roll = Rotation.from_rotvec(fwd * np.deg2rad(rng.uniform(-45, 45))).as_matrix()
    R = np.vstack([right, down, fwd]) @ roll.T
    t = -R @ centre
    F = normalize_fundamental(np.linalg.inv(K2).T @ _cross(t) @ R @ np.linalg.inv(K1))

    n_out = int(round(outlier_fraction * num_points))
    n_in = num_points - n_out
    u_in = np.empty((0, 2))
    up_in = np.empty((0, 2))
    K1inv = np.linalg.inv(K1)
    while u_in.shape[0] < n_in:
        m = 4 * (n_in - u_in.shape[0]) + 8
        px = rng.uniform([0, 0], [width, height], size=(m, 2))
        z1 = rng.uniform(depth - 3.0, depth + 3.0, size=m)
        X = (homogeneous(px) @ K1inv.T) * z1[:, None]
        Xc2 = X @ R.T + t
        proj = Xc2 @ K2.T
        z = proj[:, 2]
        with np.errstate(divide="ignore", invalid="ignore"):
            p2 = proj[:, :2] / z[:, None]
        ok = (z > 0.1) & np.all((p2 >= 0) & (p2 <= [width, height]), axis=1)
        u_in = np.vstack([u_in, px[ok]])
        up_in = np.vstack([up_in, p2[ok]])
    clean_u, clean_up = u_in[:n_in], up_in[:n_in]
    u_in = clean_u + rng.normal(scale=noise_px, size=clean_u.shape)
    up_in = clean_up + rng.normal(scale=noise_px, size=clean_up.shape)
    u_out = rng.uniform([0, 0], [width, height], size=(n_out, 2))
    up_out = rng.uniform([0, 0], [width, height], size=(n_out, 2))

    order = rng.permutation(num_points)
    # redraw the noise of inliers pushed past the labelling threshold
    for _ in range(MAX_NOISE_REDRAWS):
        bad = np.flatnonzero(epipolar_distance_sum(F, u_in, up_in) > LABEL_THRESHOLD_PX)
        if bad.size == 0:
            break
        u_in[bad] = clean_u[bad] + rng.normal(scale=noise_px, size=(bad.size, 2))
        up_in[bad] = clean_up[bad] + rng.normal(scale=noise_px, size=(bad.size, 2))
    u = np.vstack([u_in, u_out])[order]
    up = np.vstack([up_in, up_out])[order]
    labels = (epipolar_distance_sum(F, u, up) <= LABEL_THRESHOLD_PX).astype(np.int8)
    return Correspondences(u, up, labels), SceneGroundTruth(F, labels, float(width), float(height))


# -- file formats -----------------------------------------------------------

def read_correspondences(path: str | Path) -> Correspondences:
    """``u v u_prime v_prime [label]`` per line; '#' starts a comment."""
    rows, labels = [], []
    for lineno, line in enumerate(Path(path).read_text().splitlines(), 1):
        line = line.split("#", 1)[0].strip()
        if not line:
            continue
        parts = line.split()
        if len(parts) not in (4, 5):
            raise ValueError(f"{path}:{lineno}: expected 4 or 5 fields, got {len(parts)}")
        rows.append([float(v) for v in parts[:4]])
        labels.append(int(parts[4]) if len(parts) == 5 else None)
    if not rows:
        raise ValueError(f"{path}: no correspondences")
    arr = np.array(rows)
    have = [lab is not None for lab in labels]
    if any(have) and not all(have):
        raise ValueError(f"{path}: labels must be given for all lines or none")
    lab = np.array(labels, dtype=np.int8) if all(have) else None
    return Correspondences(arr[:, :2], arr[:, 2:], lab)


def write_correspondences(path: str | Path, corrs: Correspondences) -> None:
    with open(path, "w") as fh:
        for i in range(len(corrs)):
            fields = [*corrs.u[i], *corrs.u_prime[i]]
            line = " ".join(repr(float(v)) for v in fields)
            if corrs.labels is not None:
                line += f" {int(corrs.labels[i])}"
            fh.write(line + "\n")


def read_matrix(path: str | Path) -> np.ndarray:
    """Nine whitespace-separated reals, row-major."""
    vals = [float(v) for v in Path(path).read_text().split()]
    if len(vals) != 9:
        raise ValueError(f"{path}: expected 9 values, got {len(vals)}")
    return np.array(vals).reshape(3, 3)


def write_matrix(path: str | Path, F: np.ndarray) -> None:
    Path(path).write_text(" ".join(repr(float(v)) for v in np.asarray(F).reshape(-1)) + "\n")
