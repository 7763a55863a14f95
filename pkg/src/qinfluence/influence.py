"""Feasibility tests and Boolean-influence estimators.

Subset masks are boolean vectors ``z`` with ``z[i]`` selecting point ``i``.
When all ``2**N`` masks are enumerated, mask number ``k`` selects point
``i`` iff bit ``i`` of ``k`` is set.
"""

from __future__ import annotations

import csv
import math
from dataclasses import dataclass
from functools import lru_cache
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
from scipy.optimize import linprog

from .errors import ResourceError, SolverError
from .oracle import PointFitInstance, build_bv_circuit
from .qsim import MAX_QUBITS, marginal_distribution, sample_outcomes, simulate

#: Largest N accepted by :func:`influence_exact` (2**20 masks).
EXHAUSTIVE_CAP = 20

LP_TOLERANCE = 1e-9


@dataclass(frozen=True)
class LinearizedProblem:
    """Rows ``(a_i, b_i)`` of a linear regression ``a_i . x ~ b_i``."""

    A: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        A = np.atleast_2d(np.asarray(self.A, dtype=float))
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if A.shape[0] != b.size:
            raise ValueError(f"{A.shape[0]} rows in A but {b.size} responses")
        if b.size < 1:
            raise ValueError("need at least one row")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "b", b)

    @property
    def num_points(self) -> int:
        return self.b.size

    @property
    def dimension(self) -> int:
        return self.A.shape[1]

    def residuals(self, x: np.ndarray) -> np.ndarray:
        """``|a_i . x - b_i|`` for every row."""
        return np.abs(self.signed_residuals(x))

    def signed_residuals(self, x: np.ndarray) -> np.ndarray:
        """``a_i . x - b_i`` for every row."""
        x = np.asarray(x, dtype=float).reshape(-1)
        if x.size != self.dimension:
            raise ValueError(f"model has {x.size} entries, problem dimension is {self.dimension}")
        return self.A @ x - self.b


@dataclass(frozen=True)
class InfluenceEstimate:
    alphas: np.ndarray
    iterations: int
    method: str  # "exact", "sampled" or "quantum"

    def __len__(self) -> int:
        return len(self.alphas)


def _as_mask(mask: Sequence[int] | np.ndarray, n: int) -> np.ndarray:
    m = np.asarray(mask).astype(bool).reshape(-1)
    if m.size != n:
        raise ValueError(f"mask has {m.size} bits for {n} points")
    return m


# -- feasibility tests ----------------------------------------------------

def feasibility_1d(values: Sequence[float], mask: Sequence[int], two_epsilon: float) -> int:
    """1 if the selected values spread by more than ``two_epsilon``, else 0."""
    vals = np.asarray(values, dtype=float)
    m = _as_mask(mask, vals.size)
    if two_epsilon < 0:
        raise ValueError("two_epsilon must be non-negative")
    sel = vals[m]
    if sel.size < 2:
        return 0
    return int(sel.max() - sel.min() > two_epsilon)


def chebyshev_fit(problem: LinearizedProblem, mask: Sequence[int] | None = None):
    """Minimax fit ``min_x max_i |a_i.x - b_i|`` over the selected rows.

    Returns ``(x, t)``.  Rows with ``a_i = 0`` cannot be influenced by ``x``
    and contribute ``|b_i|`` to ``t`` directly.
    """
    m = np.ones(problem.num_points, bool) if mask is None else _as_mask(mask, problem.num_points)
    A, b = problem.A[m], problem.b[m]
    d = problem.dimension
    if b.size == 0:
        return np.zeros(d), 0.0
    zero = ~np.any(A != 0, axis=1)
    t_fixed = float(np.abs(b[zero]).max()) if zero.any() else 0.0
    A, b = A[~zero], b[~zero]
    if b.size == 0:
        return np.zeros(d), t_fixed
    # variables [x, t]: minimise t s.t. -t <= a.x - b <= t
    ones = np.ones((b.size, 1))
    A_ub = np.vstack([np.hstack([A, -ones]), np.hstack([-A, -ones])])
    b_ub = np.concatenate([b, -b])
    c = np.zeros(d + 1)
    c[-1] = 1.0
    bounds = [(None, None)] * d + [(0, None)]
    res = linprog(
        c, A_ub=A_ub, b_ub=b_ub, bounds=bounds, method="highs",
        options={"primal_feasibility_tolerance": 1e-10, "dual_feasibility_tolerance": 1e-10},
    )
    if res.status != 0:
        raise SolverError(f"LP failed ({res.message}) on {b.size} rows of dimension {d}")
    x = res.x[:d]
    t = float(np.abs(A @ x - b).max())
    return x, max(t, t_fixed)


def feasibility_linear(problem: LinearizedProblem, mask: Sequence[int], epsilon: float) -> int:
    """l-infinity feasibility: 0 iff some x puts every selected residual within epsilon."""
    if epsilon < 0:
        raise ValueError("epsilon must be non-negative")
    m = _as_mask(mask, problem.num_points)
    if not m.any():
        return 0
    _, t = chebyshev_fit(problem, m)
    return int(t > epsilon + LP_TOLERANCE)


class Spread1D:
    """Point-fitting oracle ``f(z) = [max - min of selected values > two_epsilon]``.

    Callable on a single mask; :meth:`evaluate_many` handles a stack of masks.
    """

    def __init__(self, values: Sequence[float], two_epsilon: float):
        if two_epsilon < 0:
            raise ValueError("two_epsilon must be non-negative")
        self.values = np.asarray(values, dtype=float).reshape(-1)
        self.two_epsilon = float(two_epsilon)

    @property
    def num_points(self) -> int:
        return self.values.size

    def __call__(self, mask) -> int:
        return feasibility_1d(self.values, mask, self.two_epsilon)

    def evaluate_many(self, masks: np.ndarray) -> np.ndarray:
        masks = np.asarray(masks, dtype=bool)
        hi = np.where(masks, self.values, -np.inf).max(axis=1)
        lo = np.where(masks, self.values, np.inf).min(axis=1)
        count = masks.sum(axis=1)
        with np.errstate(invalid="ignore"):
            return ((count >= 2) & (hi - lo > self.two_epsilon)).astype(np.uint8)

    def all_masks(self) -> np.ndarray:
        """f for every mask, indexed by the mask's integer encoding."""
        n = self.num_points
        hi = np.full(1, -np.inf)
        lo = np.full(1, np.inf)
        count = np.zeros(1, dtype=np.int64)
        for i, v in enumerate(self.values):
            hi = np.concatenate([hi, np.maximum(hi, v)])
            lo = np.concatenate([lo, np.minimum(lo, v)])
            count = np.concatenate([count, count + 1])
        with np.errstate(invalid="ignore"):
            out = (count >= 2) & (hi - lo > self.two_epsilon)
        assert out.size == 1 << n
        return out.astype(np.uint8)


class LinearFeasibility:
    """``f(z)`` for a :class:`LinearizedProblem` via an LP per mask."""

    def __init__(self, problem: LinearizedProblem, epsilon: float):
        self.problem = problem
        self.epsilon = float(epsilon)

    @property
    def num_points(self) -> int:
        return self.problem.num_points

    def __call__(self, mask) -> int:
        return feasibility_linear(self.problem, mask, self.epsilon)


# -- estimators -----------------------------------------------------------

def _mask_table(n: int) -> np.ndarray:
    idx = np.arange(1 << n, dtype=np.int64)
    return ((idx[:, None] >> np.arange(n)) & 1).astype(bool)


def truth_table(oracle: Callable, n: int) -> np.ndarray:
    """Evaluate ``oracle`` on all ``2**n`` masks (integer-encoded order)."""
    if hasattr(oracle, "all_masks"):
        return np.asarray(oracle.all_masks(), dtype=np.uint8)
    masks = _mask_table(n)
    if hasattr(oracle, "evaluate_many"):
        return np.asarray(oracle.evaluate_many(masks), dtype=np.uint8)
    return np.array([oracle(m) for m in masks], dtype=np.uint8)


def influence_exact(oracle: Callable, n: int, cap: int = EXHAUSTIVE_CAP) -> InfluenceEstimate:
    """Exact influences by enumerating every subset."""
    if n > cap:
        raise ResourceError(f"exhaustive influence limited to N <= {cap}, got {n}")
    f = truth_table(oracle, n)
    idx = np.arange(1 << n, dtype=np.int64)
    alphas = np.array([np.mean(f != f[idx ^ (1 << i)]) for i in range(n)])
    return InfluenceEstimate(alphas, 1 << n, "exact")


def _flip_table(oracle: Callable, masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """f(z_j) and f(z_j XOR e_i) for every row j and point i."""
    M, n = masks.shape
    if isinstance(oracle, Spread1D):
        return _spread_flip_table(oracle, masks)
    flipped = np.repeat(masks[:, None, :], n, axis=1)
    flipped[:, np.arange(n), np.arange(n)] ^= True
    if hasattr(oracle, "evaluate_many"):
        f0 = np.asarray(oracle.evaluate_many(masks), dtype=np.uint8)
        f1 = np.asarray(oracle.evaluate_many(flipped.reshape(M * n, n)), dtype=np.uint8)
        return f0, f1.reshape(M, n)
    f0 = np.array([oracle(z) for z in masks], dtype=np.uint8)
    f1 = np.array([[oracle(z) for z in row] for row in flipped], dtype=np.uint8)
    return f0, f1


def _spread_flip_table(oracle: Spread1D, masks: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    # O(M*N): the two extreme values on each side decide every single flip
    r = oracle.values
    te = oracle.two_epsilon
    M, n = masks.shape
    count = masks.sum(axis=1)
    up = np.where(masks, r, -np.inf)
    dn = np.where(masks, r, np.inf)
    if n >= 2:
        top = -np.partition(-up, 1, axis=1)[:, :2]
        bot = np.partition(dn, 1, axis=1)[:, :2]
        top = -np.sort(-top, axis=1)
        bot = np.sort(bot, axis=1)
    else:
        top = np.hstack([up, np.full((M, 1), -np.inf)])
        bot = np.hstack([dn, np.full((M, 1), np.inf)])
    t1, t2 = top[:, :1], top[:, 1:]
    b1, b2 = bot[:, :1], bot[:, 1:]
    with np.errstate(invalid="ignore"):
        f0 = (count >= 2) & (t1[:, 0] - b1[:, 0] > te)
        hi_rm = np.where(r >= t1, t2, t1)
        lo_rm = np.where(r <= b1, b2, b1)
        f_rm = (count[:, None] - 1 >= 2) & (hi_rm - lo_rm > te)
        hi_add = np.maximum(t1, r)
        lo_add = np.minimum(b1, r)
        f_add = (count[:, None] + 1 >= 2) & (hi_add - lo_add > te)
    f1 = np.where(masks, f_rm, f_add)
    return f0.astype(np.uint8), f1.astype(np.uint8)


def random_masks(n: int, M: int, seed: int | None) -> np.ndarray:
    return np.random.default_rng(seed).integers(0, 2, size=(M, n)).astype(bool)


def influence_sampled(
    oracle: Callable,
    n: int,
    M: int,
    seed: int | None = None,
    masks: np.ndarray | None = None,
) -> InfluenceEstimate:
    """Monte-Carlo influence estimate from ``M`` uniformly drawn subsets.

    ``f(z_j)`` is computed once per draw, so the cost is ``M * (N + 1)``
    oracle calls.  Pass ``masks`` to supply the subsets explicitly.
    """
    if masks is None:
        if M < 1:
            raise ValueError("M must be at least 1")
        masks = random_masks(n, M, seed)
    else:
        masks = np.asarray(masks, dtype=bool)
        if masks.ndim != 2 or masks.shape[1] != n:
            raise ValueError(f"masks must have shape (M, {n})")
        M = masks.shape[0]
    f0, f1 = _flip_table(oracle, masks)
    alphas = (f1 != f0[:, None]).mean(axis=0)
    return InfluenceEstimate(alphas, M, "sampled")


@lru_cache(maxsize=512)
def bv_distribution(instance: PointFitInstance, comparator: str = "auto") -> np.ndarray:
    """Distribution of the measured subset register of the BV circuit.

    Entry ``k`` is the probability of reading ``s`` with ``s_i`` = bit
    ``N-1-i`` of ``k`` (leading bit = point 0).
    """
    bv = build_bv_circuit(instance, comparator)
    if bv.num_qubits > MAX_QUBITS:
        raise ResourceError(f"BV circuit needs {bv.num_qubits} qubits, limit is {MAX_QUBITS}")
    state = simulate(bv.circuit)
    dist = marginal_distribution(state, bv.layout.z)
    dist.setflags(write=False)
    return dist


def _pattern_bits(n: int) -> np.ndarray:
    k = np.arange(1 << n, dtype=np.int64)
    return ((k[:, None] >> np.arange(n - 1, -1, -1)) & 1).astype(np.uint8)


def _unpermute(alphas: np.ndarray, permutation: Sequence[int] | None) -> np.ndarray:
    if permutation is None:
        return alphas
    perm = np.asarray(permutation)
    if sorted(perm.tolist()) != list(range(alphas.size)):
        raise ValueError("permutation must be a bijection on point indices")
    out = np.empty_like(alphas)
    out[perm] = alphas
    return out


def influence_quantum(
    instance: PointFitInstance,
    M: int,
    seed: int | None = None,
    permutation: Sequence[int] | None = None,
    exact: bool = False,
    comparator: str = "auto",
) -> InfluenceEstimate:
    """Influences read off the simulated BV circuit.

    Draws ``M`` measurements of the subset register and averages each bit.
    With ``exact=True`` the Bernoulli parameters are returned instead of a
    sample mean.  ``permutation`` (from :func:`qinfluence.oracle.preprocess`)
    maps the result back to the caller's point order.
    """
    dist = bv_distribution(instance, comparator)
    bits = _pattern_bits(instance.num_points)
    if exact:
        alphas = dist @ bits
        return InfluenceEstimate(_unpermute(np.clip(alphas, 0.0, 1.0), permutation), 0, "quantum")
    if M < 1:
        raise ValueError("M must be at least 1")
    outcomes = sample_outcomes(dist, M, seed)
    alphas = bits[outcomes].mean(axis=0)
    return InfluenceEstimate(_unpermute(alphas, permutation), M, "quantum")


def hoeffding_bound(M: int, delta: float) -> float:
    """Lower bound on ``Pr(|alpha_hat - alpha| < delta)`` after ``M`` samples."""
    if M < 1:
        raise ValueError("M must be at least 1")
    if delta <= 0:
        raise ValueError("delta must be positive")
    return 1.0 - 2.0 * math.exp(-2.0 * M * delta * delta)


def write_influence_csv(path: str | Path, estimate: InfluenceEstimate) -> None:
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["index", "influence", "method", "M"])
        for i, a in enumerate(estimate.alphas):
            w.writerow([i, f"{a:.12g}", estimate.method, estimate.iterations])
