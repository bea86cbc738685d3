"""Bump constants as exact suprema over the cubes of the dyadic tree.

All suprema run over every dyadic cube of the single grid, levels ``0..L``.
Ties are broken towards the smallest ``(level, index)``.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from typing import Callable, Iterable, Optional

import numpy as np

from .dyadic import DyadicCube, DyadicWeight, EpsilonFn, entropy, epsilon_eval
from .errors import DomainError


@dataclass(frozen=True)
class BumpReport:
    value: float
    witness: Optional[DyadicCube]
    table: Optional[dict] = None

    def to_dict(self) -> dict:
        out = {
            "value": self.value,
            "witness": None if self.witness is None else self.witness.to_dict(),
        }
        if self.table is not None:
            out["table"] = [
                {"cube": q.to_dict(), "value": v} for q, v in sorted(self.table.items())
            ]
        return out


def check_p(p: float) -> None:
    if not (1 < p < math.inf):
        raise DomainError(f"p must lie in (1, inf), got {p}")


def _sup_over_levels(levels: list, table: bool) -> BumpReport:
    best, witness = -math.inf, None
    for level, arr in enumerate(levels):
        flat = int(np.argmax(arr))
        v = float(arr.flat[flat])
        if v > best:
            best = v
            witness = DyadicCube(level, np.unravel_index(flat, arr.shape))
    tab = None
    if table:
        tab = {
            DyadicCube(level, idx): float(arr[idx])
            for level, arr in enumerate(levels)
            for idx in np.ndindex(*arr.shape)
        }
    return BumpReport(best, witness, tab)


def _bumped(weight: DyadicWeight, eps: EpsilonFn) -> list:
    return [rho * epsilon_eval(eps, rho) for rho in weight.entropies]


def joint_bump_levels(sigma: DyadicWeight, w: DyadicWeight, p: float, eps: EpsilonFn) -> list:
    """Per-level arrays of ``rho_{sigma,eps}(Q) <sigma>_Q^(p-1) <w>_Q``."""
    sigma.check_same_shape(w)
    return [
        b * s ** (p - 1) * a
        for b, s, a in zip(_bumped(sigma, eps), sigma.means, w.means)
    ]


def joint_bump(sigma: DyadicWeight, w: DyadicWeight, p: float, eps: EpsilonFn,
               table: bool = False) -> BumpReport:
    check_p(p)
    return _sup_over_levels(joint_bump_levels(sigma, w, p, eps), table)


def product_bump(sigma: DyadicWeight, w: DyadicWeight, p: float, eps: EpsilonFn,
                 table: bool = False) -> BumpReport:
    """Both weights bumped: ``<sigma>^(p-1) rho_{sigma,eps} <w> rho_{w,eps}^(p-1)``."""
    check_p(p)
    sigma.check_same_shape(w)
    levels = [
        s ** (p - 1) * bs * a * bw ** (p - 1)
        for s, bs, a, bw in zip(sigma.means, _bumped(sigma, eps), w.means, _bumped(w, eps))
    ]
    return _sup_over_levels(levels, table)


def _sup_over_cubes(cubes: Iterable[DyadicCube], contribution: Callable, table: bool) -> BumpReport:
    best, witness, tab = 0.0, None, {} if table else None
    for Q in sorted(cubes):
        v = contribution(Q)
        if witness is None or v > best:
            best, witness = v, Q
        if tab is not None:
            tab[Q] = v
    return BumpReport(best, witness, tab)


def _cubes_of(S) -> Iterable[DyadicCube]:
    return getattr(S, "cubes", S)


def sparse_Ap(sigma: DyadicWeight, w: DyadicWeight, p: float, S, table: bool = False) -> BumpReport:
    """``sup over Q in S of <sigma>_Q^(p-1) <w>_Q``; an empty collection gives 0."""
    check_p(p)
    sigma.check_same_shape(w)
    return _sup_over_cubes(
        _cubes_of(S), lambda Q: sigma.average(Q) ** (p - 1) * w.average(Q), table
    )


def sparse_Ainfty(sigma: DyadicWeight, S, table: bool = False) -> BumpReport:
    """``sup over Q in S`` of the entropy of ``sigma`` on ``Q``."""
    return _sup_over_cubes(_cubes_of(S), lambda Q: entropy(sigma, Q), table)


def max_Ap_all_cubes(sigma: DyadicWeight, w: DyadicWeight, p: float) -> BumpReport:
    check_p(p)
    return _sup_over_levels([s ** (p - 1) * a for s, a in zip(sigma.means, w.means)], False)


def max_entropy_all_cubes(sigma: DyadicWeight) -> BumpReport:
    return _sup_over_levels(list(sigma.entropies), False)
