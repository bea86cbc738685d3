"""Operator norms between weighted spaces, testing constants and Carleson constants.

Operators act on leaf functions ``f`` and the norms are

    ||T_sigma|| = sup ||T(sigma f)||_{L^p(w)} / ||f||_{L^p(sigma)},

with ``T`` either a sparse operator or the dyadic maximal operator.  Functions
are canonicalized to zero on leaves where ``sigma`` vanishes.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Optional

import numpy as np
from scipy.sparse.linalg import LinearOperator, svds

from .constants import check_p
from .dyadic import DyadicCube, DyadicWeight, EpsilonFn, LeafFunction, coarsen_sum, epsilon_eval, refine
from .parallel import ordered_map
from .sparse import SparseCollection, apply_sparse

MAX_ITER = 10_000
DEFAULT_TOL = 1e-8
DEFAULT_TRIALS = 8
DENSE_LIMIT = 1024


def conjugate_exponent(p: float) -> float:
    return p / (p - 1.0)


@dataclass(frozen=True, eq=False)
class NormEstimate:
    value: float
    kind: str
    witness: Optional[LeafFunction]
    iterations: int = 0
    residual: float = 0.0
    details: dict = field(default_factory=dict)

    def to_dict(self, include_witness: bool = True) -> dict:
        out = {
            "value": self.value,
            "kind": self.kind,
            "iterations": self.iterations,
            "residual": self.residual,
        }
        if self.details:
            out["details"] = self.details
        if include_witness:
            out["witness"] = None if self.witness is None else self.witness.values.ravel().tolist()
        return out


@dataclass(frozen=True)
class TestingConstants:
    forward: float
    dual: float
    forward_witness: Optional[DyadicCube]
    dual_witness: Optional[DyadicCube]

    __test__ = False  # not a pytest class

    def to_dict(self) -> dict:
        return {
            "forward": self.forward,
            "dual": self.dual,
            "forward_witness": None if self.forward_witness is None else self.forward_witness.to_dict(),
            "dual_witness": None if self.dual_witness is None else self.dual_witness.to_dict(),
        }


@dataclass(frozen=True)
class CarlesonReport:
    """``testing`` is the indicator-testing constant; ``lower_bound`` a general-f value.

    Both are in units of p-th powers: sum / ||f||_{L^p(sigma)}^p.
    """

    testing: float
    lower_bound: float
    witness: Optional[DyadicCube]
    iterations: int = 0

    def to_dict(self) -> dict:
        return {
            "testing": self.testing,
            "lower_bound": self.lower_bound,
            "witness": None if self.witness is None else self.witness.to_dict(),
            "iterations": self.iterations,
        }


def _lp(x: np.ndarray, p: float) -> float:
    m = float(np.max(np.abs(x))) if x.size else 0.0
    if m == 0.0:
        return 0.0
    return m * float(np.sum((np.abs(x) / m) ** p)) ** (1.0 / p)


def weighted_lp_norm(f: np.ndarray, weight: DyadicWeight, p: float) -> float:
    """``||f||_{L^p(weight)}`` for a leaf array ``f``."""
    return _lp(f * weight.values ** (1.0 / p), p) * weight.leaf_volume ** (1.0 / p)


# ---------------------------------------------------------------------------
# sparse operator kernels


class SparseKernel:
    """The symmetric leaf-space matrix of ``g -> S g`` for a fixed collection and depth.

    Works on flat leaf vectors in C order.  A dense matrix is formed for small
    trees, otherwise products go through block sums per level.
    """

    def __init__(self, S: SparseCollection, dimension: int, depth: int):
        self.S = S
        self.dimension = dimension
        self.depth = depth
        self.shape = (1 << depth,) * dimension
        self.n = 1 << (dimension * depth)
        self.masks = S.level_masks(depth)
        self.levels = [l for l, m in enumerate(self.masks) if m.any()]
        self._dense = self._build_dense() if self.n <= DENSE_LIMIT else None

    def _cell_ids(self, level: int) -> np.ndarray:
        shift = self.depth - level
        grids = np.indices(self.shape).reshape(self.dimension, -1) >> shift
        return np.ravel_multi_index(tuple(grids), (1 << level,) * self.dimension)

    def _build_dense(self) -> np.ndarray:
        K = np.zeros((self.n, self.n))
        for level in self.levels:
            cells = self._cell_ids(level)
            member = self.masks[level].ravel()[cells]
            same = (cells[:, None] == cells[None, :]) & member[:, None]
            K += same * (1.0 / (1 << (self.dimension * (self.depth - level))))
        return K

    def dense(self) -> np.ndarray:
        return self._dense if self._dense is not None else self._build_dense()

    def __call__(self, x: np.ndarray) -> np.ndarray:
        if self._dense is not None:
            return self._dense @ x
        g = x.reshape(self.shape)
        out = np.zeros(self.shape)
        for level in self.levels:
            k = self.depth - level
            avg = coarsen_sum(g, k) / float(1 << (k * self.dimension))
            out += refine(np.where(self.masks[level], avg, 0.0), k)
        return out.ravel()


def sparse_rayleigh(S: SparseCollection, sigma: DyadicWeight, w: DyadicWeight, p: float, f) -> float:
    """``||S(sigma f)||_{L^p(w)} / ||f||_{L^p(sigma)}``; 0 for a sigma-null ``f``."""
    vals = np.where(sigma.values > 0, np.asarray(getattr(f, "values", f), dtype=float), 0.0)
    den = weighted_lp_norm(vals, sigma, p)
    if den == 0.0:
        return 0.0
    image = apply_sparse(S, sigma.values * vals).values
    return weighted_lp_norm(image, w, p) / den


def sparse_norm_p2(S: SparseCollection, sigma: DyadicWeight, w: DyadicWeight) -> NormEstimate:
    """Exact ``L^2(sigma) -> L^2(w)`` norm as the spectral norm of ``w^(1/2) K sigma^(1/2)``."""
    sigma.check_same_shape(w)
    rows = np.flatnonzero(w.values.ravel() > 0)
    cols = np.flatnonzero(sigma.values.ravel() > 0)
    if len(S) == 0 or rows.size == 0 or cols.size == 0:
        return NormEstimate(0.0, "exact", LeafFunction(np.zeros_like(sigma.values)))
    kernel = SparseKernel(S, sigma.dimension, sigma.depth)
    ws = np.sqrt(w.values.ravel())
    ss = np.sqrt(sigma.values.ravel())
    if kernel.n <= DENSE_LIMIT:
        A = ws[rows, None] * kernel.dense()[np.ix_(rows, cols)] * ss[None, cols]
        _, sv, vt = np.linalg.svd(A)
        top, vec = float(sv[0]), np.abs(vt[0])
    else:
        n = kernel.n

        def mv(x):
            y = np.zeros(n)
            y[cols] = ss[cols] * np.ravel(x)
            return (ws * kernel(y))[rows]

        def rmv(x):
            y = np.zeros(n)
            y[rows] = ws[rows] * np.ravel(x)
            return (ss * kernel(y))[cols]

        op = LinearOperator((rows.size, cols.size), matvec=mv, rmatvec=rmv, dtype=float)
        _, sv, vt = svds(op, k=1, tol=1e-12, random_state=0)
        top, vec = float(sv[0]), np.abs(vt[0])
    f = np.zeros(sigma.n_leaves)
    f[cols] = vec / ss[cols]
    witness = LeafFunction(f.reshape(sigma.values.shape))
    ratio = sparse_rayleigh(S, sigma, w, 2.0, witness)
    return NormEstimate(top, "exact", witness, 0, abs(ratio - top))


def _boyd_ascent(apply, apply_t, sigma_flat, w_flat, p, start, tol, max_iter):
    """Power iteration ``f <- (T^t(w (T(sigma f))^(p-1)))^(1/(p-1))`` for a positive ``T``.

    Iterates are normalized in ``L^p(sigma)``; returns (f, residual, iterations).
    """
    q1 = 1.0 / (p - 1.0)
    live = sigma_flat > 0
    sig_root = sigma_flat ** (1.0 / p)

    def normalize(f):
        n = _lp(f * sig_root, p)
        return f / n if n > 0 else f

    f = normalize(np.where(live, start, 0.0))
    residual, it = math.inf, 0
    for it in range(1, max_iter + 1):
        image = apply(sigma_flat * f)
        h = apply_t(w_flat * image ** (p - 1.0))
        new = normalize(np.where(live, h ** q1, 0.0))
        residual = _lp((new - f) * sig_root, p)
        f = new
        if residual < tol:
            break
    return f, residual, it


def sparse_norm_general(S: SparseCollection, sigma: DyadicWeight, w: DyadicWeight, p: float,
                        trials: int = DEFAULT_TRIALS, tol: float = DEFAULT_TOL, seed: int = 0,
                        max_iter: int = MAX_ITER, threads: Optional[int] = None) -> NormEstimate:
    """Nonnegative power iteration for the ``L^p(sigma) -> L^p(w)`` norm of ``f -> S(sigma f)``.

    Every restart starts from a random positive vector.  The result is
    ``converged-iterate`` only when every restart converged and all restarts
    agree within ``tol``; otherwise it is a lower bound.
    """
    check_p(p)
    sigma.check_same_shape(w)
    zero = LeafFunction(np.zeros_like(sigma.values))
    if len(S) == 0 or not np.any(w.values > 0):
        return NormEstimate(0.0, "exact", zero)
    kernel = SparseKernel(S, sigma.dimension, sigma.depth)
    sig, wt = sigma.values.ravel(), w.values.ravel()
    rng = np.random.default_rng(seed)
    starts = [rng.random(kernel.n) + 1e-3 for _ in range(max(1, trials))]

    def run(start):
        f, res, it = _boyd_ascent(kernel, kernel, sig, wt, p, start, tol, max_iter)
        witness = LeafFunction(f.reshape(sigma.values.shape))
        return sparse_rayleigh(S, sigma, w, p, witness), witness, res, it

    results = ordered_map(run, starts, threads)
    best = max(range(len(results)), key=lambda i: (results[i][0], -i))
    value, witness, res, _ = results[best]
    values = [r[0] for r in results]
    converged = all(r[2] < tol for r in results) and (max(values) - min(values)) <= tol * max(value, 1e-300)
    return NormEstimate(
        value,
        "converged-iterate" if converged else "lower-bound",
        witness,
        sum(r[3] for r in results),
        float(res),
        {"restart_values": values},
    )


def sparse_norm(S: SparseCollection, sigma: DyadicWeight, w: DyadicWeight, p: float,
                trials: int = DEFAULT_TRIALS, tol: float = DEFAULT_TOL, seed: int = 0,
                threads: Optional[int] = None) -> NormEstimate:
    """Exact norm at ``p = 2``, power-iteration estimate otherwise."""
    if p == 2:
        return sparse_norm_p2(S, sigma, w)
    return sparse_norm_general(S, sigma, w, p, trials=trials, tol=tol, seed=seed, threads=threads)


# ---------------------------------------------------------------------------
# testing constants


def _localized_testing(S: SparseCollection, sigma: DyadicWeight, w: DyadicWeight, p: float):
    best, witness = 0.0, None
    for Q0 in S.cubes:
        mass = sigma.mass(Q0)
        if mass == 0.0:
            continue
        local = apply_sparse(S.within(Q0), sigma).values
        val = float(np.sum(local ** p * w.values)) * sigma.leaf_volume / mass
        if witness is None or val > best:
            best, witness = val, Q0
    return best ** (1.0 / p), witness


def sawyer_testing(S: SparseCollection, sigma: DyadicWeight, w: DyadicWeight, p: float) -> TestingConstants:
    """Forward and dual indicator-testing constants of the sparse operator.

    ``forward^p = max over Q0 in S of int_{Q0} (sum_{Q in S, Q in Q0} <sigma>_Q 1_Q)^p dw / sigma(Q0)``
    and ``dual`` is the same with ``(sigma, w, p)`` replaced by ``(w, sigma, p')``.
    """
    check_p(p)
    sigma.check_same_shape(w)
    fwd, fw = _localized_testing(S, sigma, w, p)
    dual, dw = _localized_testing(S, w, sigma, conjugate_exponent(p))
    return TestingConstants(fwd, dual, fw, dw)


# ---------------------------------------------------------------------------
# Carleson embedding


def carleson_constant(sigma: DyadicWeight, S: SparseCollection, p: float,
                      eps: Optional[EpsilonFn] = None, trials: int = DEFAULT_TRIALS,
                      seed: int = 0, tol: float = DEFAULT_TOL, max_iter: int = MAX_ITER) -> CarlesonReport:
    """Constant of ``sum_{Q in S} (<f>^sigma_Q)^p sigma(Q) / rho(Q) <= C ||f||^p_{L^p(sigma)}``.

    With ``eps`` given, ``rho`` is replaced by the bumped entropy ``rho eps(rho)``.
    """
    check_p(p)
    cubes = [Q for Q in S.cubes if sigma.mass(Q) > 0]
    if not cubes:
        return CarlesonReport(0.0, 0.0, None)
    rho = np.array([float(sigma.entropies[Q.level][Q.index]) for Q in cubes])
    if eps is not None:
        rho = rho * epsilon_eval(eps, rho)
    masses = np.array([sigma.mass(Q) for Q in cubes])
    coeff = masses / rho

    # indicator testing over the collection tree
    position = {Q: i for i, Q in enumerate(cubes)}
    sub = coeff.copy()
    for Q in sorted(cubes, reverse=True):
        P = S.parents[Q]
        while P is not None and P not in position:
            P = S.parents[P]
        if P is not None:
            sub[position[P]] += sub[position[Q]]
    ratios = sub / masses
    k = int(np.argmax(ratios))
    testing, witness = float(ratios[k]), cubes[k]

    # general f: f -> (<f>^sigma_Q)_Q from L^p(sigma) to l^p(coeff), conjugated to an l^p -> l^p matrix
    sig = sigma.values.ravel()
    live = np.flatnonzero(sig > 0)
    v = sigma.leaf_volume
    B = np.zeros((len(cubes), live.size))
    flat_index = np.arange(sig.size).reshape(sigma.values.shape)
    col_of = {int(c): j for j, c in enumerate(live)}
    for i, Q in enumerate(cubes):
        leaves = flat_index[Q.slices(sigma.depth)].ravel()
        cols = [col_of[int(c)] for c in leaves if int(c) in col_of]
        B[i, cols] = coeff[i] ** (1.0 / p) * (sig[live[cols]] * v) ** (1.0 - 1.0 / p) / masses[i]
    rng = np.random.default_rng(seed)
    best, iterations = 0.0, 0
    ones_w = np.ones(len(cubes))
    ones_s = np.ones(live.size)
    for _ in range(max(1, trials)):
        u, _, it = _boyd_ascent(lambda x: B @ x, lambda y: B.T @ y, ones_s, ones_w, p,
                                rng.random(live.size) + 1e-3, tol, max_iter)
        iterations += it
        nu = _lp(u, p)
        if nu > 0:
            best = max(best, (_lp(B @ u, p) / nu) ** p)
    return CarlesonReport(testing, max(best, testing), witness, iterations)


# ---------------------------------------------------------------------------
# dyadic maximal operator


def _indicator_tables(sigma: DyadicWeight, w: DyadicWeight, p: float):
    """Per level: ``sigma(Q0)``, ``int_{Q0} M(sigma 1_{Q0})^p dw`` and ``int M(sigma 1_{Q0})^p dw``.

    Outside ``Q0`` the dyadic maximal function of ``sigma 1_{Q0}`` at ``x`` is
    ``sigma(Q0) / |R|`` with ``R`` the smallest dyadic cube containing ``x`` and ``Q0``.
    """
    L, d = sigma.depth, sigma.dimension
    v = sigma.leaf_volume
    w_mass = [m * 2.0 ** (-d * l) for l, m in enumerate(w.means)]
    out = []
    for level in range(L + 1):
        M = sigma.level_maximal(level)
        local = coarsen_sum(M ** p * w.values, L - level) * v
        mass = sigma.means[level] * 2.0 ** (-d * level)
        outside = np.zeros_like(mass)
        for j in range(level):
            ring = refine(w_mass[j], level - j) - refine(w_mass[j + 1], level - j - 1)
            outside += (mass * 2.0 ** (d * j)) ** p * ring
        out.append((mass, local, local + outside))
    return out


def _best_ratio(tables, column: int, p: float):
    best, witness = 0.0, None
    for level, row in enumerate(tables):
        mass, num = row[0], row[column]
        with np.errstate(divide="ignore", invalid="ignore"):
            ratio = np.where(mass > 0, num / np.where(mass > 0, mass, 1.0), 0.0)
        flat = int(np.argmax(ratio))
        val = float(ratio.flat[flat])
        if witness is None or val > best:
            best, witness = val, DyadicCube(level, np.unravel_index(flat, ratio.shape))
    return best ** (1.0 / p), witness


def maximal_testing(sigma: DyadicWeight, w: DyadicWeight, p: float):
    """``max over Q0 of (int_{Q0} M(sigma 1_{Q0})^p dw / sigma(Q0))^(1/p)`` and its cube."""
    check_p(p)
    return _best_ratio(_indicator_tables(sigma, w, p), 1, p)


def _maximal_levels(g: np.ndarray, depth: int) -> np.ndarray:
    """Stack of level averages of ``g`` refined to the leaves: shape ``(depth + 1, n_leaves)``."""
    means = LeafFunction(g).means
    return np.stack([refine(m, depth - l).ravel() for l, m in enumerate(means)])


def maximal_rayleigh(sigma: DyadicWeight, w: DyadicWeight, p: float, f) -> float:
    """``||M(sigma f)||_{L^p(w)} / ||f||_{L^p(sigma)}`` for the dyadic maximal operator on ``[0,1)^d``."""
    vals = np.abs(np.where(sigma.values > 0, np.asarray(getattr(f, "values", f), dtype=float), 0.0))
    den = weighted_lp_norm(vals, sigma, p)
    if den == 0.0:
        return 0.0
    M = _maximal_levels(sigma.values * vals, sigma.depth).max(axis=0).reshape(sigma.values.shape)
    return weighted_lp_norm(M, w, p) / den


def _maximal_ascent(sigma: DyadicWeight, w: DyadicWeight, p: float, start: np.ndarray,
                    steps: int, tol: float):
    """Linearize ``M`` at the current iterate (pick the maximizing cube per leaf) and take a power step."""
    L, d = sigma.depth, sigma.dimension
    shape = sigma.values.shape
    sig, wt = sigma.values.ravel(), w.values.ravel()
    q1 = 1.0 / (p - 1.0)
    f = np.where(sig > 0, start, 0.0)
    best_val, best_f = maximal_rayleigh(sigma, w, p, f.reshape(shape)), f
    for _ in range(steps):
        stack = _maximal_levels((sig * f).reshape(shape), L)
        choice = np.argmax(stack, axis=0)
        image = stack.max(axis=0)
        y = wt * image ** (p - 1.0)
        h = np.zeros(sig.size)
        for level in np.unique(choice):
            k = L - int(level)
            sel = np.where(choice == level, y, 0.0).reshape(shape)
            block = coarsen_sum(sel, k) / float(1 << (k * d))
            h += refine(block, k).ravel()
        new = np.where(sig > 0, h ** q1, 0.0)
        val = maximal_rayleigh(sigma, w, p, new.reshape(shape))
        if val > best_val * (1.0 + tol):
            best_val, best_f = val, new
            f = new
        else:
            break
    return best_val, best_f


def maximal_norm(sigma: DyadicWeight, w: DyadicWeight, p: float, trials: int = DEFAULT_TRIALS,
                 seed: int = 0, steps: int = 50, tol: float = DEFAULT_TOL) -> NormEstimate:
    """Lower bound for the dyadic ``M_sigma: L^p(sigma) -> L^p(w)`` norm.

    The value is the best of the indicators ``1_{Q0}`` (all cubes) and of a
    linearized ascent from ``trials`` random starts.  The localized testing
    constant, comparable to the norm by Sawyer's characterization, is
    reported in ``details["testing"]``.
    """
    check_p(p)
    sigma.check_same_shape(w)
    tables = _indicator_tables(sigma, w, p)
    testing, testing_cube = _best_ratio(tables, 1, p)
    indicator_value, cube = _best_ratio(tables, 2, p)
    rng = np.random.default_rng(seed)
    general, general_f = 0.0, None
    for _ in range(max(0, trials)):
        val, f = _maximal_ascent(sigma, w, p, rng.random(sigma.n_leaves) + 1e-3, steps, tol)
        if general_f is None or val > general:
            general, general_f = val, f
    details = {
        "testing": testing,
        "testing_witness": None if testing_cube is None else testing_cube.to_dict(),
        "indicator": indicator_value,
        "indicator_witness": None if cube is None else cube.to_dict(),
        "general": general,
    }
    if general_f is not None and general > indicator_value:
        witness = LeafFunction(general_f.reshape(sigma.values.shape))
        details["source"] = "general"
    else:
        ind = np.zeros_like(sigma.values)
        if cube is not None:
            ind[cube.slices(sigma.depth)] = 1.0
        witness = LeafFunction(ind)
        details["source"] = "indicator"
    value = maximal_rayleigh(sigma, w, p, witness)
    residual = abs(value - max(general, indicator_value))
    return NormEstimate(value, "lower-bound", witness, trials, residual, details)
