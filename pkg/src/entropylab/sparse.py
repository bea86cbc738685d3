"""Sparse collections, stopping cubes, sparse operators and pigeonhole classes."""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from functools import cached_property
from typing import Iterable, Optional

import numpy as np

from .constants import check_p
from .dyadic import (
    DyadicCube,
    DyadicWeight,
    EpsilonFn,
    LeafFunction,
    epsilon_eval,
    local_maximal,
    refine,
)
from .errors import DomainError, StructureError

STOPPING_FACTOR = 4.0


def _common_ancestor(cubes: list) -> DyadicCube:
    Q = min(cubes, key=lambda c: c.level)
    for level in range(Q.level, -1, -1):
        cand = Q.ancestor(level)
        if all(cand.contains(c) for c in cubes):
            return cand
    raise StructureError("cubes have no common ancestor")  # pragma: no cover


@dataclass(frozen=True, eq=False)
class SparseCollection:
    """A finite family of dyadic cubes nested inside ``root``.

    Sparsity is not enforced on construction; use :func:`is_sparse`.
    """

    cubes: tuple
    root: Optional[DyadicCube] = None

    def __post_init__(self):
        cubes = tuple(sorted(set(self.cubes)))
        root = self.root
        if root is None:
            if not cubes:
                raise StructureError("an empty collection needs an explicit root")
            root = _common_ancestor(list(cubes))
        for Q in cubes:
            if not root.contains(Q):
                raise StructureError(f"cube {Q} is not inside the root {root}")
        object.__setattr__(self, "cubes", cubes)
        object.__setattr__(self, "root", root)

    def __len__(self) -> int:
        return len(self.cubes)

    def __iter__(self):
        return iter(self.cubes)

    def __contains__(self, Q) -> bool:
        return Q in self._members

    @cached_property
    def _members(self) -> frozenset:
        return frozenset(self.cubes)

    @cached_property
    def position(self) -> dict:
        return {Q: i for i, Q in enumerate(self.cubes)}

    @property
    def dimension(self) -> int:
        return self.root.dimension

    @property
    def max_level(self) -> int:
        return max((Q.level for Q in self.cubes), default=self.root.level)

    @cached_property
    def parents(self) -> dict:
        """Smallest member strictly containing each member (``None`` for tops)."""
        out = {}
        for Q in self.cubes:
            out[Q] = None
            for level in range(Q.level - 1, -1, -1):
                A = Q.ancestor(level)
                if A in self._members:
                    out[Q] = A
                    break
        return out

    @cached_property
    def children(self) -> dict:
        out = {Q: [] for Q in self.cubes}
        for Q, P in self.parents.items():
            if P is not None:
                out[P].append(Q)
        return out

    @cached_property
    def certificate(self) -> dict:
        """``|union of members strictly inside Q| / |Q|`` for every member ``Q``."""
        # maximal strict submembers are the collection-children, which are disjoint
        return {
            Q: sum(c.volume for c in kids) / Q.volume for Q, kids in self.children.items()
        }

    def within(self, Q0: DyadicCube) -> "SparseCollection":
        return SparseCollection(tuple(Q for Q in self.cubes if Q0.contains(Q)), Q0)

    def level_masks(self, depth: int) -> list:
        if self.max_level > depth:
            raise StructureError(f"collection reaches level {self.max_level} beyond depth {depth}")
        d = self.dimension
        masks = [np.zeros((1 << l,) * d, dtype=bool) for l in range(depth + 1)]
        for Q in self.cubes:
            masks[Q.level][Q.index] = True
        return masks

    def with_cubes(self, extra: Iterable[DyadicCube]) -> "SparseCollection":
        return SparseCollection(self.cubes + tuple(extra), self.root)

    def to_dict(self) -> dict:
        return {"root": self.root.to_dict(), "cubes": [Q.to_dict() for Q in self.cubes]}

    @classmethod
    def from_dict(cls, data: dict) -> "SparseCollection":
        try:
            root = data.get("root")
            return cls(
                tuple(DyadicCube.from_dict(c) for c in data["cubes"]),
                None if root is None else DyadicCube.from_dict(root),
            )
        except KeyError as exc:
            raise StructureError(f"sparse collection JSON is missing field {exc}") from exc


@dataclass(frozen=True)
class SparsityCertificate:
    sparse: bool
    worst_ratio: float
    worst_cube: Optional[DyadicCube]

    def __bool__(self) -> bool:
        return self.sparse

    def to_dict(self) -> dict:
        return {
            "sparse": self.sparse,
            "worst_ratio": self.worst_ratio,
            "worst_cube": None if self.worst_cube is None else self.worst_cube.to_dict(),
        }


def is_sparse(S: SparseCollection, bound: float = 0.5) -> SparsityCertificate:
    worst, worst_cube = 0.0, None
    for Q, ratio in S.certificate.items():
        if worst_cube is None or ratio > worst:
            worst, worst_cube = ratio, Q
    return SparsityCertificate(worst <= bound, worst, worst_cube)


# ---------------------------------------------------------------------------
# stopping cubes


@dataclass(frozen=True, eq=False)
class StoppingTree:
    """Stopping cubes for ``sigma`` under ``root`` with the disjoint sets ``E_S``.

    ``owner`` is a leaf array holding, for every leaf of the root cube, the
    position in ``collection.cubes`` of the stopping cube ``S`` whose ``E_S``
    contains that leaf; leaves outside the root hold -1.
    """

    collection: SparseCollection
    parent: dict
    owner: np.ndarray
    degenerate: bool = False

    @property
    def root(self) -> DyadicCube:
        return self.collection.root

    @property
    def cubes(self) -> tuple:
        return self.collection.cubes

    def e_mask(self, S: DyadicCube) -> np.ndarray:
        return self.owner == self.collection.position[S]

    def to_dict(self) -> dict:
        out = self.collection.to_dict()
        out["degenerate"] = self.degenerate
        return out


def build_stopping_tree(sigma: DyadicWeight, Q0: Optional[DyadicCube] = None) -> StoppingTree:
    """Stopping cubes: children of ``S`` are the maximal ``Q`` strictly inside ``S``
    with ``<sigma>_Q > 4 <sigma>_S``; recursion stops at the leaves."""
    if Q0 is None:
        Q0 = DyadicCube.root(sigma.dimension)
    sigma.check_cube(Q0)
    L = sigma.depth
    owner = np.full(sigma.values.shape, -1, dtype=np.int64)
    if sigma.average(Q0) == 0.0:
        owner[Q0.slices(L)] = 0
        owner.setflags(write=False)
        return StoppingTree(SparseCollection((Q0,), Q0), {Q0: None}, owner, degenerate=True)

    means = sigma.means
    order, parent = [], {Q0: None}
    stack = [Q0]
    while stack:
        S = stack.pop()
        position = len(order)
        order.append(S)
        threshold = STOPPING_FACTOR * means[S.level][S.index]
        alive = np.ones((1,) * S.dimension, dtype=bool)
        for k in range(S.level + 1, L + 1):
            alive = refine(alive, 1)
            hit = alive & (means[k][S.slices(k)] > threshold)
            if hit.any():
                scale = 1 << (k - S.level)
                for offset in np.argwhere(hit):
                    child = DyadicCube(k, tuple(i * scale + int(o) for i, o in zip(S.index, offset)))
                    parent[child] = S
                    stack.append(child)
                alive &= ~hit
        view = owner[S.slices(L)]
        view[alive] = position

    collection = SparseCollection(tuple(order), Q0)
    remap = np.array([collection.position[S] for S in order], dtype=np.int64)
    inside = owner >= 0
    owner[inside] = remap[owner[inside]]
    owner.setflags(write=False)
    return StoppingTree(collection, parent, owner)


# ---------------------------------------------------------------------------
# sparse operators


def _as_leaf(f) -> LeafFunction:
    return f if isinstance(f, LeafFunction) else LeafFunction(f)


def apply_sparse(S: SparseCollection, f) -> LeafFunction:
    """``S f = sum over Q in S of <f>_Q 1_Q`` (unweighted averages)."""
    f = _as_leaf(f)
    if S.dimension != f.dimension:
        raise StructureError("collection and function dimensions differ")
    L = f.depth
    out = np.zeros_like(f.values)
    for level, mask in enumerate(S.level_masks(L)):
        if mask.any():
            out += refine(np.where(mask, f.means[level], 0.0), L - level)
    return LeafFunction(out)


def pairing(S: SparseCollection, sigma: DyadicWeight, w: DyadicWeight, f, g) -> float:
    """``<S(sigma f), g w> = sum over Q in S of <sigma f>_Q <g w>_Q |Q|``."""
    f, g = _as_leaf(f), _as_leaf(g)
    for other in (w, f, g):
        sigma.check_same_shape(other)
    sf = LeafFunction(sigma.values * f.values)
    gw = LeafFunction(g.values * w.values)
    d = sigma.dimension
    total = 0.0
    for level, mask in enumerate(S.level_masks(sigma.depth)):
        if mask.any():
            total += float(np.sum(sf.means[level][mask] * gw.means[level][mask])) * 2.0 ** (-d * level)
    return total


@dataclass(frozen=True)
class DominationResult:
    max_ratio: float
    witness: DyadicCube
    tree: StoppingTree = field(repr=False)

    def to_dict(self) -> dict:
        return {"max_ratio": self.max_ratio, "witness_leaf": self.witness.to_dict(),
                "stopping_cubes": len(self.tree.cubes)}


def maximal_domination_check(sigma: DyadicWeight, Q0: Optional[DyadicCube] = None) -> DominationResult:
    """Largest pointwise ratio ``M(sigma 1_Q0)(x) / <sigma>_{S(x)}`` with ``x in E_{S(x)}``."""
    if Q0 is None:
        Q0 = DyadicCube.root(sigma.dimension)
    tree = build_stopping_tree(sigma, Q0)
    L = sigma.depth
    sl = Q0.slices(L)
    M = local_maximal(sigma, Q0).values[sl]
    stop_avgs = np.array([sigma.average(S) for S in tree.cubes])
    denom = stop_avgs[tree.owner[sl]]
    with np.errstate(divide="ignore", invalid="ignore"):
        ratio = np.where(denom > 0, M / np.where(denom > 0, denom, 1.0), 0.0)
    flat = int(np.argmax(ratio))
    local = np.unravel_index(flat, ratio.shape)
    scale = 1 << (L - Q0.level)
    leaf = DyadicCube(L, tuple(i * scale + int(o) for i, o in zip(Q0.index, local)))
    return DominationResult(float(ratio.flat[flat]), leaf, tree)


# ---------------------------------------------------------------------------
# pigeonholing


@dataclass(frozen=True)
class PigeonholeClass:
    """Members with ``2^a <= functional < 2^(a+1)`` and ``2^r <= rho < 2^(r+1)``.

    ``a`` is ``None`` for cubes whose classifying functional vanishes.
    """

    a: Optional[int]
    r: int
    members: tuple

    def to_dict(self) -> dict:
        return {"a": self.a, "r": self.r, "cubes": [Q.to_dict() for Q in self.members]}


def dyadic_band(x: float) -> Optional[int]:
    """The integer ``k`` with ``2^k <= x < 2^(k+1)``, computed exactly."""
    if x <= 0:
        return None
    if not math.isfinite(x):
        raise DomainError(f"cannot band {x}")
    return math.frexp(x)[1] - 1


PIGEONHOLE_MODES = ("max-thm", "testing-thm")


def classifying_functional(sigma: DyadicWeight, w: DyadicWeight, p: float, eps: EpsilonFn,
                           Q: DyadicCube) -> float:
    rho = float(sigma.entropies[Q.level][Q.index])
    return sigma.average(Q) ** (p - 1) * w.average(Q) * rho * epsilon_eval(eps, rho)


def pigeonhole(S: SparseCollection, sigma: DyadicWeight, w: DyadicWeight, p: float,
               eps: EpsilonFn, mode: str = "max-thm") -> list:
    """Partition ``S`` into the classes ``S_{a,r}``; empty classes are omitted."""
    check_p(p)
    if mode not in PIGEONHOLE_MODES:
        raise DomainError(f"mode must be one of {PIGEONHOLE_MODES}, got {mode!r}")
    sigma.check_same_shape(w)
    classes: dict = {}
    for Q in S.cubes:
        a = dyadic_band(classifying_functional(sigma, w, p, eps, Q))
        r = dyadic_band(float(sigma.entropies[Q.level][Q.index]))
        classes.setdefault((a, r), []).append(Q)
    keys = sorted(classes, key=lambda k: (-math.inf if k[0] is None else k[0], k[1]))
    return [PigeonholeClass(a, r, tuple(classes[(a, r)])) for a, r in keys]
