"""Finite dyadic model: cubes, weights, averages, the dyadic maximal function,
the entropy functional and the logarithmic bump functions.

Everything lives on the unit cube ``[0, 1)^d`` cut into ``2^{dL}`` leaves of a
depth-``L`` dyadic tree.  Functions are piecewise constant on the leaves and
are stored as arrays of shape ``(2**L,) * d``; axis ``k`` of the array is the
``k``-th coordinate of the cube index.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from functools import cached_property
from itertools import product
from typing import Iterator, Optional, Sequence

import numpy as np
from scipy import integrate

from .errors import DomainError, StructureError

MAX_DEPTH = {1: 16, 2: 8}


def _check_dimension_depth(dimension: int, depth: int) -> None:
    if dimension not in MAX_DEPTH:
        raise StructureError(f"dimension must be 1 or 2, got {dimension}")
    if not 1 <= depth <= MAX_DEPTH[dimension]:
        raise StructureError(
            f"depth must lie in [1, {MAX_DEPTH[dimension]}] for d={dimension}, got {depth}"
        )


# ---------------------------------------------------------------------------
# block helpers on (2**k,)*d grids


def coarsen_sum(a: np.ndarray, k: int) -> np.ndarray:
    """Sum ``a`` over blocks of ``2**k`` cells along every axis."""
    if k == 0:
        return a
    b = 1 << k
    shape = []
    for n in a.shape:
        shape += [n // b, b]
    return a.reshape(shape).sum(axis=tuple(range(1, 2 * a.ndim, 2)))


def coarsen_mean(a: np.ndarray, k: int) -> np.ndarray:
    return coarsen_sum(a, k) / float(1 << (k * a.ndim))


def _block_max(a: np.ndarray, k: int) -> np.ndarray:
    if k == 0:
        return a
    b = 1 << k
    shape = []
    for n in a.shape:
        shape += [n // b, b]
    return a.reshape(shape).max(axis=tuple(range(1, 2 * a.ndim, 2)))


def refine(a: np.ndarray, k: int) -> np.ndarray:
    """Repeat every cell of ``a`` ``2**k`` times along each axis."""
    if k == 0:
        return a
    b = 1 << k
    for axis in range(a.ndim):
        a = np.repeat(a, b, axis=axis)
    return a


# ---------------------------------------------------------------------------
# cubes


@dataclass(frozen=True, order=True)
class DyadicCube:
    """A dyadic subcube of ``[0, 1)^d``: side ``2**-level``, corner ``index * 2**-level``."""

    level: int
    index: tuple

    def __post_init__(self):
        index = tuple(int(i) for i in np.atleast_1d(self.index))
        object.__setattr__(self, "index", index)
        if self.level < 0:
            raise StructureError(f"cube level must be >= 0, got {self.level}")
        if not index:
            raise StructureError("cube index must have at least one coordinate")
        n = 1 << self.level
        if any(not 0 <= i < n for i in index):
            raise StructureError(f"cube index {index} out of range for level {self.level}")

    @classmethod
    def root(cls, dimension: int = 1) -> "DyadicCube":
        return cls(0, (0,) * dimension)

    @property
    def dimension(self) -> int:
        return len(self.index)

    @property
    def volume(self) -> float:
        return 2.0 ** (-self.dimension * self.level)

    @property
    def is_root(self) -> bool:
        return self.level == 0

    def parent(self) -> "DyadicCube":
        if self.level == 0:
            raise StructureError("the root cube has no parent")
        return DyadicCube(self.level - 1, tuple(i >> 1 for i in self.index))

    def children(self) -> list:
        base = tuple(2 * i for i in self.index)
        return [
            DyadicCube(self.level + 1, tuple(b + o for b, o in zip(base, offs)))
            for offs in product((0, 1), repeat=self.dimension)
        ]

    def ancestor(self, level: int) -> "DyadicCube":
        if not 0 <= level <= self.level:
            raise StructureError(f"no ancestor at level {level} for {self}")
        shift = self.level - level
        return DyadicCube(level, tuple(i >> shift for i in self.index))

    def contains(self, other: "DyadicCube") -> bool:
        """True when ``other`` is a (not necessarily strict) subcube of ``self``."""
        if other.dimension != self.dimension or other.level < self.level:
            return False
        return other.ancestor(self.level) == self

    def slices(self, level: int) -> tuple:
        """Index slices selecting the cells of the level-``level`` grid inside this cube."""
        if level < self.level:
            raise StructureError(f"cannot slice {self} at coarser level {level}")
        b = 1 << (level - self.level)
        return tuple(slice(i * b, (i + 1) * b) for i in self.index)

    def to_dict(self) -> dict:
        return {"level": self.level, "index": list(self.index)}

    @classmethod
    def from_dict(cls, data: dict) -> "DyadicCube":
        try:
            return cls(int(data["level"]), tuple(data["index"]))
        except (KeyError, TypeError) as exc:
            raise StructureError(f"malformed cube {data!r}") from exc

    def __str__(self) -> str:
        parts = []
        for i in self.index:
            lo = Fraction(i, 1 << self.level)
            hi = Fraction(i + 1, 1 << self.level)
            parts.append(f"[{lo},{hi})")
        return "x".join(parts)


def iter_cubes(dimension: int, depth: int) -> Iterator[DyadicCube]:
    """All cubes of a depth-``depth`` tree, ordered by (level, index)."""
    for level in range(depth + 1):
        for index in product(range(1 << level), repeat=dimension):
            yield DyadicCube(level, index)


# ---------------------------------------------------------------------------
# leaf functions and weights


@dataclass(frozen=True, eq=False)
class LeafFunction:
    """A function that is constant on each leaf of the dyadic tree."""

    values: np.ndarray

    def __post_init__(self):
        values = np.array(self.values, dtype=float)
        d = values.ndim
        if d not in MAX_DEPTH:
            raise StructureError(f"leaf arrays must be 1- or 2-dimensional, got ndim={d}")
        n = values.shape[0]
        if any(s != n for s in values.shape) or n < 2 or n & (n - 1):
            raise StructureError(f"leaf array shape {values.shape} is not (2**L,)*d")
        _check_dimension_depth(d, n.bit_length() - 1)
        values.setflags(write=False)
        object.__setattr__(self, "values", values)

    @classmethod
    def from_flat(cls, dimension: int, depth: int, flat: Sequence[float], **kwargs):
        _check_dimension_depth(dimension, depth)
        arr = np.asarray(flat, dtype=float)
        expected = 1 << (dimension * depth)
        if arr.size != expected:
            raise StructureError(f"expected {expected} leaf values, got {arr.size}")
        return cls(arr.reshape((1 << depth,) * dimension), **kwargs)

    @classmethod
    def constant(cls, dimension: int, depth: int, value: float = 1.0, **kwargs):
        _check_dimension_depth(dimension, depth)
        return cls(np.full((1 << depth,) * dimension, float(value)), **kwargs)

    @property
    def dimension(self) -> int:
        return self.values.ndim

    @property
    def depth(self) -> int:
        return self.values.shape[0].bit_length() - 1

    @property
    def n_leaves(self) -> int:
        return self.values.size

    @property
    def leaf_volume(self) -> float:
        return 2.0 ** (-self.dimension * self.depth)

    @cached_property
    def means(self) -> list:
        """Cube averages per level: ``means[l][index]`` is the average over that cube."""
        out = [self.values]
        a = self.values
        for _ in range(self.depth):
            a = coarsen_mean(a, 1)
            out.append(a)
        out.reverse()
        for arr in out:
            arr.setflags(write=False)
        return out

    def check_cube(self, Q: DyadicCube) -> None:
        if Q.dimension != self.dimension:
            raise StructureError(f"cube dimension {Q.dimension} != function dimension {self.dimension}")
        if Q.level > self.depth:
            raise StructureError(f"cube level {Q.level} exceeds tree depth {self.depth}")

    def check_same_shape(self, other: "LeafFunction") -> None:
        if self.values.shape != other.values.shape:
            raise StructureError(f"shape mismatch: {self.values.shape} vs {other.values.shape}")

    def average(self, Q: DyadicCube) -> float:
        self.check_cube(Q)
        return float(self.means[Q.level][Q.index])

    def integral(self, Q: Optional[DyadicCube] = None) -> float:
        if Q is None:
            Q = DyadicCube.root(self.dimension)
        return self.average(Q) * Q.volume

    def restrict(self, Q: DyadicCube) -> "LeafFunction":
        """Copy of the function multiplied by the indicator of ``Q``."""
        self.check_cube(Q)
        vals = np.zeros_like(self.values)
        sl = Q.slices(self.depth)
        vals[sl] = self.values[sl]
        return LeafFunction(vals)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "depth": self.depth,
            "values": self.values.ravel().tolist(),
        }


def indicator(Q: DyadicCube, depth: int) -> LeafFunction:
    vals = np.zeros((1 << depth,) * Q.dimension)
    vals[Q.slices(depth)] = 1.0
    return LeafFunction(vals)


@dataclass(frozen=True, eq=False)
class DyadicWeight(LeafFunction):
    """A weight: nonnegative finite densities on the leaves.

    The all-zero weight must be asked for explicitly with ``allow_zero=True``.
    """

    allow_zero: bool = field(default=False, repr=False)

    def __post_init__(self):
        super().__post_init__()
        v = self.values
        if not np.all(np.isfinite(v)):
            raise DomainError("weight densities must be finite")
        if np.any(v < 0):
            raise DomainError("weight densities must be nonnegative")
        if not self.allow_zero and not np.any(v > 0):
            raise DomainError("weight is identically zero (pass allow_zero=True if intended)")

    @classmethod
    def zero(cls, dimension: int, depth: int) -> "DyadicWeight":
        return cls.constant(dimension, depth, 0.0, allow_zero=True)

    @property
    def densities(self) -> np.ndarray:
        return self.values

    def mass(self, Q: Optional[DyadicCube] = None) -> float:
        return self.integral(Q)

    def scaled(self, factor: float) -> "DyadicWeight":
        return DyadicWeight(self.values * factor, allow_zero=self.allow_zero or factor == 0)

    def to_dict(self) -> dict:
        return {
            "dimension": self.dimension,
            "depth": self.depth,
            "densities": self.values.ravel().tolist(),
        }

    @classmethod
    def from_dict(cls, data: dict) -> "DyadicWeight":
        try:
            return cls.from_flat(int(data["dimension"]), int(data["depth"]), data["densities"],
                                 allow_zero=bool(data.get("allow_zero", False)))
        except KeyError as exc:
            raise StructureError(f"weight JSON is missing field {exc}") from exc

    # -- cached tree functionals ------------------------------------------

    def level_maximal(self, level: int) -> np.ndarray:
        """Leaf array whose value at x is ``M(sigma 1_R)(x)`` for the level-``level`` cube R containing x."""
        means = self.means
        M = means[level]
        for k in range(level + 1, self.depth + 1):
            M = np.maximum(refine(M, 1), means[k])
        return M

    @cached_property
    def entropies(self) -> list:
        """``entropies[l][index]`` is the entropy of the corresponding cube."""
        out = []
        for level in range(self.depth + 1):
            M = self.level_maximal(level)
            mean_M = coarsen_mean(M, self.depth - level)
            avg = self.means[level]
            with np.errstate(divide="ignore", invalid="ignore"):
                rho = np.where(avg > 0, mean_M / np.where(avg > 0, avg, 1.0), 1.0)
            rho = np.maximum(rho, 1.0)
            k = self.depth - level
            flat = _block_max(self.values, k) == -_block_max(-self.values, k)
            rho[flat] = 1.0  # constant on the cube: exactly 1, whatever the rounding
            rho.setflags(write=False)
            out.append(rho)
        return out


# ---------------------------------------------------------------------------
# bump functions


@dataclass(frozen=True)
class EpsilonFn:
    """Logarithmic bump ``eps`` normalized so its admissibility integral equals one.

    ``joint``:       eps(t) = (1/delta) (1 + ln t)^(1 + delta),
                     with  int_1^inf dt / (eps(t) t) = 1.
    ``separated-p``: eps(t) = delta^(-p) (1 + ln t)^(p (1 + delta)),
                     with  int_1^inf eps(t)^(-1/p) dt / t = 1.
    """

    flavor: str = "joint"
    delta: float = 1.0
    p: Optional[float] = None

    def __post_init__(self):
        if self.flavor not in ("joint", "separated-p"):
            raise DomainError(f"unknown epsilon flavor {self.flavor!r}")
        if not (self.delta > 0 and math.isfinite(self.delta)):
            raise DomainError(f"delta must be positive, got {self.delta}")
        if self.flavor == "separated-p":
            if self.p is None or not (1 < self.p < math.inf):
                raise DomainError(f"separated-p flavor needs p in (1, inf), got {self.p}")

    @classmethod
    def joint(cls, delta: float = 1.0) -> "EpsilonFn":
        return cls("joint", delta)

    @classmethod
    def separated(cls, p: float, delta: float = 1.0) -> "EpsilonFn":
        return cls("separated-p", delta, p)

    def __call__(self, t):
        return epsilon_eval(self, t)

    def integrand(self, t):
        """The function whose integral against dt/t on [1, inf) is normalized to one."""
        e = epsilon_eval(self, t)
        if self.flavor == "joint":
            return 1.0 / e
        return e ** (-1.0 / self.p)

    def partial_normalization(self, upper: float) -> float:
        """Closed form of the admissibility integral over ``[1, upper]``."""
        # both flavors reduce to delta * (1 + u)^-(1 + delta) in u = ln t
        return 1.0 - (1.0 + math.log(upper)) ** (-self.delta)

    def to_dict(self) -> dict:
        out = {"flavor": self.flavor, "delta": self.delta}
        if self.p is not None:
            out["p"] = self.p
        return out


def epsilon_eval(eps: EpsilonFn, t):
    t_arr = np.asarray(t, dtype=float)
    if np.any(t_arr < 1) or np.any(np.isnan(t_arr)):
        raise DomainError(f"epsilon is defined on [1, inf), got t={t}")
    log_term = 1.0 + np.log(t_arr)
    if eps.flavor == "joint":
        out = log_term ** (1.0 + eps.delta) / eps.delta
    else:
        out = eps.delta ** (-eps.p) * log_term ** (eps.p * (1.0 + eps.delta))
    return float(out) if out.ndim == 0 else out


def normalization_integral(eps: EpsilonFn, upper: float) -> float:
    """Quadrature of the admissibility integral over ``[1, upper]`` (in the variable ln t)."""
    if upper < 1:
        raise DomainError("upper limit must be >= 1")
    val, _ = integrate.quad(lambda u: eps.integrand(math.exp(u)), 0.0, math.log(upper),
                            epsabs=1e-13, epsrel=1e-12, limit=200)
    return val


# ---------------------------------------------------------------------------
# operations on single cubes


def cube_average(weight: LeafFunction, Q: DyadicCube) -> float:
    return weight.average(Q)


def weighted_average(f: LeafFunction, weight: DyadicWeight, Q: DyadicCube) -> float:
    """``(int_Q f sigma) / sigma(Q)``, or 0 when ``sigma(Q) = 0``."""
    f.check_same_shape(weight)
    weight.check_cube(Q)
    sl = Q.slices(weight.depth)
    sigma = weight.values[sl]
    total = float(np.sum(sigma))
    if total == 0.0:
        return 0.0
    return float(np.sum(f.values[sl] * sigma)) / total


def local_maximal(weight: LeafFunction, Q: DyadicCube) -> LeafFunction:
    """Dyadic maximal function of ``weight * 1_Q``, evaluated on the leaves of ``Q``.

    Values outside ``Q`` are zero.  One top-down pass over the subtree of ``Q``.
    """
    weight.check_cube(Q)
    means = weight.means
    M = np.asarray(means[Q.level][Q.index]).reshape((1,) * Q.dimension)
    for k in range(Q.level + 1, weight.depth + 1):
        M = np.maximum(refine(M, 1), means[k][Q.slices(k)])
    out = np.zeros_like(weight.values)
    out[Q.slices(weight.depth)] = M
    return LeafFunction(out)


def entropy(weight: DyadicWeight, Q: DyadicCube) -> float:
    """``rho(Q) = int_Q M(sigma 1_Q) / sigma(Q)``; equal to 1 when ``sigma(Q) = 0``."""
    avg = weight.average(Q)
    if avg == 0.0:
        return 1.0
    vals = weight.values[Q.slices(weight.depth)]
    if vals.max() == vals.min():
        return 1.0
    M = local_maximal(weight, Q)
    mean_M = float(np.mean(M.values[Q.slices(weight.depth)]))
    # rho >= 1 holds exactly; clamp absorbs last-bit rounding for constant weights
    return max(mean_M / avg, 1.0)


def bumped_entropy(weight: DyadicWeight, Q: DyadicCube, eps: EpsilonFn) -> float:
    rho = entropy(weight, Q)
    return rho * epsilon_eval(eps, rho)

