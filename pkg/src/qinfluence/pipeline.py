"""Influence accumulation for fundamental-matrix estimation, model selection and RANSAC.

All randomness is counter-based: every hypothesis ``t`` and every subset
draw ``j`` gets a stream derived from ``(seed, t, j)``, and each point's
random bit is keyed by a hash of its own coordinates rather than its
position in the input.  Permuting the input correspondences therefore
permutes the outputs and nothing else, and hypotheses can be evaluated in
any order.
"""

from __future__ import annotations

import logging
import time
from dataclasses import asdict, dataclass, field

import numpy as np

from .errors import DegeneracyError, EstimationError, PipelineError
from .geometry import (
    NSGD_ACCURATE,
    Correspondences,
    SceneGroundTruth,
    eight_point,
    enforce_rank2,
    fundamental_to_model,
    hartley_transform,
    linearize,
    model_to_fundamental,
    normalize_fundamental,
    nsgd,
    roc_auc,
    transform_points,
)
from .influence import (
    InfluenceEstimate,
    LinearizedProblem,
    Spread1D,
    influence_quantum,
    influence_sampled,
)
from .oracle import preprocess_preserving

log = logging.getLogger(__name__)

ENGINES = ("classical-1d", "quantum-1d")

#: Per-slot attempts before a degenerate hypothesis slot is abandoned.
MAX_SLOT_RESAMPLES = 100


@dataclass(frozen=True)
class AccumulationConfig:
    epsilon: float = 0.6
    M: int = 1000
    T: int = 1000
    H: int = 50
    engine: str = "classical-1d"
    bits: int = 3
    seed: int = 0
    # mean distance of the centred image coordinates in the linearisation frame
    frame_scale: float = 0.35
    # points per 1-D influence problem; None = all points (classical only)
    batch_size: int | None = None
    exact_marginals: bool = False
    # feed a_i.x - b_i (True) or |a_i.x - b_i| to the 1-D influence step
    signed_residuals: bool = True

    def __post_init__(self):
        if min(self.M, self.T, self.H) < 1:
            raise ValueError("M, T and H must be at least 1")
        if not self.epsilon > 0:
            raise ValueError("epsilon must be positive")
        if self.engine not in ENGINES:
            raise ValueError(f"engine must be one of {ENGINES}")
        if self.frame_scale <= 0:
            raise ValueError("frame_scale must be positive")
        if self.batch_size is not None and self.batch_size < 1:
            raise ValueError("batch_size must be positive")
        if self.engine == "quantum-1d" and (self.batch_size or 0) > 4:
            raise ValueError("the quantum engine simulates at most 4 points per batch")

    @property
    def effective_batch(self) -> int | None:
        if self.engine == "quantum-1d":
            return self.batch_size or 4
        return self.batch_size

    def to_dict(self) -> dict:
        return asdict(self)


# -- counter-based randomness ---------------------------------------------

_M1 = np.uint64(0xBF58476D1CE4E5B9)
_M2 = np.uint64(0x94D049BB133111EB)
_GOLDEN = np.uint64(0x9E3779B97F4A7C15)
_SAMPLE_TAG = np.uint64(0xA5A5A5A5A5A5A5A5)
_SHOT_TAG = np.uint64(0x5A5A5A5A5A5A5A5A)


def _mix(x):
    x = np.asarray(x, dtype=np.uint64)
    x = (x ^ (x >> np.uint64(30))) * _M1
    x = (x ^ (x >> np.uint64(27))) * _M2
    return x ^ (x >> np.uint64(31))


def _counter(*parts: int) -> np.uint64:
    h = np.array([0], dtype=np.uint64)
    for p in parts:
        h = _mix(h ^ (np.array([p & 0xFFFFFFFFFFFFFFFF], dtype=np.uint64) * _GOLDEN + _GOLDEN))
    return h


def point_keys(corrs: Correspondences) -> np.ndarray:
    """64-bit hash of each correspondence's coordinates."""
    raw = np.hstack([corrs.u, corrs.u_prime]).astype(np.float64)
    raw = np.where(raw == 0, 0.0, raw)  # fold -0.0 onto 0.0
    words = raw.view(np.uint64)
    h = np.zeros(len(corrs), dtype=np.uint64)
    for k in range(words.shape[1]):
        h = _mix(h ^ words[:, k])
    return h


def _keyed_uniform(stream: np.ndarray, keys: np.ndarray) -> np.ndarray:
    return _mix(stream.reshape(-1, 1) ^ keys.reshape(1, -1))


def keyed_masks(seed: int, t: int, keys: np.ndarray, M: int) -> np.ndarray:
    """``(M, N)`` uniform subsets for hypothesis ``t``; point bits follow their keys."""
    streams = _mix(_counter(seed, t) ^ (np.arange(1, M + 1, dtype=np.uint64) * _GOLDEN))
    return (_keyed_uniform(streams, keys) >> np.uint64(63)).astype(bool)


def _keyed_order(seed: int, t: int, attempt: int, keys: np.ndarray, tag=_SAMPLE_TAG) -> np.ndarray:
    stream = _mix(_counter(seed, t, attempt) ^ tag)
    scores = _keyed_uniform(stream, keys)[0]
    return np.lexsort((keys, scores))


# -- frame ----------------------------------------------------------------

@dataclass(frozen=True)
class LinearFrame:
    """Similarities applied to both views before linearisation."""

    T1: np.ndarray
    T2: np.ndarray

    @classmethod
    def for_correspondences(cls, corrs: Correspondences, scale: float) -> "LinearFrame":
        factor = scale / np.sqrt(2)
        T1 = hartley_transform(corrs.u)
        T2 = hartley_transform(corrs.u_prime)
        T1[:2] *= factor
        T2[:2] *= factor
        return cls(T1, T2)

    def apply(self, corrs: Correspondences) -> Correspondences:
        return Correspondences(
            transform_points(self.T1, corrs.u), transform_points(self.T2, corrs.u_prime), corrs.labels
        )

    def to_pixels(self, F_frame: np.ndarray) -> np.ndarray:
        return normalize_fundamental(self.T2.T @ F_frame @ self.T1)


@dataclass
class Hypotheses:
    """Minimal-sample models in the linearisation frame."""

    models: list[np.ndarray]
    slots: list[int]
    resamples: int
    skipped: int


def sample_hypotheses(frame_corrs: Correspondences, keys: np.ndarray, T: int, seed: int) -> Hypotheses:
    if len(frame_corrs) < 8:
        raise ValueError("need at least 8 correspondences")
    models, slots = [], []
    resamples = skipped = 0
    for t in range(T):
        for attempt in range(MAX_SLOT_RESAMPLES):
            idx = np.sort(_keyed_order(seed, t, attempt, keys)[:8])
            try:
                x = fundamental_to_model(eight_point(frame_corrs.subset(idx)))
            except DegeneracyError:
                resamples += 1
                if resamples > MAX_SLOT_RESAMPLES * T:
                    raise PipelineError(f"hypothesis sampling degenerate after {resamples} resamples")
                continue
            models.append(x)
            slots.append(t)
            break
        else:
            skipped += 1
            log.warning("hypothesis slot %d abandoned after %d degenerate samples", t, MAX_SLOT_RESAMPLES)
    if not models:
        raise PipelineError("no non-degenerate hypothesis could be sampled")
    return Hypotheses(models, slots, resamples, skipped)


# -- per-hypothesis 1-D influence ----------------------------------------

def hypothesis_influence(
    residuals: np.ndarray, keys: np.ndarray, t: int, config: AccumulationConfig
) -> np.ndarray:
    """Point-fitting influences of the residual values of one hypothesis."""
    n = residuals.size
    two_eps = 2.0 * config.epsilon
    batch = config.effective_batch
    if batch is None or batch >= n:
        groups = [np.arange(n)]
    else:
        order = _keyed_order(config.seed, t, 0, keys, tag=_SHOT_TAG)
        groups = [np.sort(order[k:k + batch]) for k in range(0, n, batch)]

    alphas = np.zeros(n)
    for g, members in enumerate(groups):
        r = residuals[members]
        if config.engine == "classical-1d":
            masks = keyed_masks(config.seed, t * 1_000_003 + g, keys[members], config.M)
            est = influence_sampled(Spread1D(r, two_eps), r.size, config.M, masks=masks)
        else:
            inst, perm = preprocess_preserving(r, config.bits, two_eps)
            shot_seed = int(_counter(config.seed, t, g)[0] >> np.uint64(1))
            est = influence_quantum(
                inst, config.M, seed=shot_seed, permutation=perm, exact=config.exact_marginals
            )
        alphas[members] = est.alphas
    return alphas


def accumulate_influence(corrs: Correspondences, config: AccumulationConfig, details: dict | None = None) -> np.ndarray:
    """Log-average point-fitting influences over ``T`` minimal-sample hypotheses.

    Returns values min-max normalised to [0, 1] (all zeros if constant).
    ``details``, when given, receives the frame, hypotheses and raw scores.
    """
    if len(corrs) < 8:
        raise ValueError("need at least 8 correspondences")
    frame = LinearFrame.for_correspondences(corrs, config.frame_scale)
    fc = frame.apply(corrs)
    problem = linearize(fc)
    keys = point_keys(corrs)
    hyps = sample_hypotheses(fc, keys, config.T, config.seed)
    floor = 1.0 / (2 * config.M)
    total = np.zeros(len(corrs))
    for x, t in zip(hyps.models, hyps.slots):
        r = problem.signed_residuals(x) if config.signed_residuals else problem.residuals(x)
        a = hypothesis_influence(r, keys, t, config)
        total += np.log(a + floor)
    raw = total / len(hyps.models)
    if details is not None:
        details.update(frame=frame, problem=problem, hypotheses=hyps, raw=raw, keys=keys)
    return minmax(raw)


def minmax(values: np.ndarray) -> np.ndarray:
    values = np.asarray(values, dtype=float)
    lo, hi = values.min(), values.max()
    if hi - lo <= 0:
        return np.zeros_like(values)
    return (values - lo) / (hi - lo)


# -- model selection --------------------------------------------------------

@dataclass
class FitResult:
    influences: np.ndarray
    x: np.ndarray
    F: np.ndarray | None  # None unless the model has 8 entries
    consensus: int
    inliers: np.ndarray
    gamma: float | None = None
    diagnostics: list[dict] = field(default_factory=list)
    timings: dict[str, float] = field(default_factory=dict)


def _least_squares(problem: LinearizedProblem, rows: np.ndarray) -> np.ndarray:
    x, *_ = np.linalg.lstsq(problem.A[rows], problem.b[rows], rcond=None)
    return x


def _consensus(problem: LinearizedProblem, x: np.ndarray, epsilon: float):
    r = problem.residuals(x)
    inl = r <= epsilon
    rms = float(np.sqrt(np.mean(r[inl] ** 2))) if inl.any() else float("inf")
    return inl, rms


def threshold_grid(H: int) -> np.ndarray:
    """``H`` thresholds spaced uniformly over [0, 1], both ends included."""
    if H < 1:
        raise ValueError("H must be at least 1")
    return np.linspace(0.0, 1.0, H) if H > 1 else np.array([1.0])


def model_select(problem: LinearizedProblem, influences: np.ndarray, epsilon: float, H: int = 50) -> FitResult:
    """Least squares on points with influence <= gamma for each threshold; keep the best consensus."""
    infl = np.asarray(influences, dtype=float)
    if infl.size != problem.num_points:
        raise ValueError("one influence per row is required")
    if infl.min() < 0 or infl.max() > 1:
        raise ValueError("influences must be normalised to [0, 1]")
    d = problem.dimension
    best = None
    diagnostics = []
    seen: dict[bytes, tuple] = {}
    for gamma in threshold_grid(H):
        rows = infl <= gamma
        if rows.sum() < d:
            diagnostics.append({"gamma": float(gamma), "selected": int(rows.sum()), "skipped": True})
            continue
        key = np.packbits(rows).tobytes()
        if key not in seen:
            x = _least_squares(problem, rows)
            seen[key] = (x, *_consensus(problem, x, epsilon))
        x, inl, rms = seen[key]
        diagnostics.append({
            "gamma": float(gamma), "selected": int(rows.sum()),
            "consensus": int(inl.sum()), "rms": rms, "skipped": False,
        })
        cand = (int(inl.sum()), -rms)
        if best is None or cand > best[0]:
            best = (cand, float(gamma), x, inl)
    if best is None:
        raise EstimationError(f"every threshold selected fewer than {d} points")
    _, gamma, x, inl = best
    F = model_to_fundamental(x) if x.size == 8 else None
    return FitResult(infl, x, F, int(inl.sum()), inl, gamma, diagnostics)


def fit_fundamental(corrs: Correspondences, config: AccumulationConfig) -> FitResult:
    """Accumulate influences, select a model and express it as a pixel-space ``F``."""
    t0 = time.perf_counter()
    details: dict = {}
    infl = accumulate_influence(corrs, config, details)
    t1 = time.perf_counter()
    res = model_select(details["problem"], infl, config.epsilon, config.H)
    t2 = time.perf_counter()
    res.F = details["frame"].to_pixels(enforce_rank2(model_to_fundamental(res.x)))
    res.timings = {"accumulate": t1 - t0, "select": t2 - t1}
    return res


def ransac_baseline(corrs: Correspondences, epsilon: float, T: int, seed: int = 0,
                    frame_scale: float = AccumulationConfig.frame_scale) -> FitResult:
    """RANSAC on the linearised residual with the pipeline's hypotheses.

    The best-consensus model is refitted by least squares on its inliers.
    ``influences`` holds each point's residual to the final model (the score
    used for ROC comparisons).
    """
    t0 = time.perf_counter()
    frame = LinearFrame.for_correspondences(corrs, frame_scale)
    fc = frame.apply(corrs)
    problem = linearize(fc)
    hyps = sample_hypotheses(fc, point_keys(corrs), T, seed)
    best = None
    for x in hyps.models:
        inl, rms = _consensus(problem, x, epsilon)
        cand = (int(inl.sum()), -rms)
        if best is None or cand > best[0]:
            best = (cand, x, inl)
    _, x, inl = best
    if inl.sum() >= problem.dimension:
        refit = _least_squares(problem, inl)
        inl_refit, _ = _consensus(problem, refit, epsilon)
        if inl_refit.sum() >= inl.sum():
            x, inl = refit, inl_refit
    F = frame.to_pixels(enforce_rank2(model_to_fundamental(x)))
    return FitResult(problem.residuals(x), x, F, int(inl.sum()), inl,
                     timings={"ransac": time.perf_counter() - t0})


# -- experiment -------------------------------------------------------------

def evaluate_fit(F: np.ndarray, truth: SceneGroundTruth | None, width=None, height=None) -> dict:
    if truth is None:
        return {}
    w = width if width is not None else truth.width
    h = height if height is not None else truth.height
    value = nsgd(F, truth.F, w, h)
    return {"nsgd": value, "accurate": bool(value < NSGD_ACCURATE)}


def run_experiment(corrs: Correspondences, config: AccumulationConfig,
                   truth: SceneGroundTruth | None = None) -> dict:
    """Fit with influences and with RANSAC; score both against whatever ground truth exists."""
    fit = fit_fundamental(corrs, config)
    base = ransac_baseline(corrs, config.epsilon, config.T, config.seed, config.frame_scale)
    out: dict = {"fit": fit, "ransac": base}
    outliers = corrs.outlier_flags
    if outliers is not None and 0 < outliers.sum() < len(outliers):
        out["auc"] = roc_auc(fit.influences, outliers)
        out["ransac_auc"] = roc_auc(base.influences, outliers)
    if truth is not None:
        out.update(evaluate_fit(fit.F, truth))
        rb = evaluate_fit(base.F, truth)
        out["ransac_nsgd"], out["ransac_accurate"] = rb["nsgd"], rb["accurate"]
    return out
