"""Ratio experiments for the maximal, sparse and A_p-A_infinity estimates.

Each checker evaluates an operator quantity and the matching bump constant
on one instance and returns a :class:`VerificationReport` whose ``ratio`` is
the quotient of the two.  The estimates only hold up to unspecified
constants, so ratios are compared with calibrated regression bounds.
"""

from __future__ import annotations

import csv
import io
import math
import time
from dataclasses import dataclass, field, replace
from typing import Optional, Union

import numpy as np

from .constants import check_p, joint_bump, product_bump, sparse_Ainfty, sparse_Ap
from .dyadic import MAX_DEPTH, DyadicCube, DyadicWeight, EpsilonFn
from .errors import DegenerateInputError, DomainError, StructureError
from .normlab import (
    DEFAULT_TOL,
    DEFAULT_TRIALS,
    conjugate_exponent,
    maximal_norm,
    sawyer_testing,
    sparse_norm,
)
from .parallel import ordered_map
from .sparse import SparseCollection, apply_sparse, build_stopping_tree, is_sparse, pigeonhole

REPORT_VERSION = 1
TARGETS = ("max-thm", "thm-one", "thm-two", "lemma")

WEIGHT_KINDS = {
    "constant": {"value"},
    "power-law": {"center", "exponent"},
    "lognormal": {"seed", "variance"},
    "spike": {"leaf", "mass"},
    "explicit": {"densities"},
}


# ---------------------------------------------------------------------------
# weight generation


@dataclass(frozen=True)
class WeightSpec:
    kind: str
    dimension: int = 1
    depth: int = 6
    params: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.kind not in WEIGHT_KINDS:
            raise DomainError(f"unknown weight kind {self.kind!r}; expected one of {sorted(WEIGHT_KINDS)}")
        unknown = set(self.params) - WEIGHT_KINDS[self.kind]
        if unknown:
            raise DomainError(f"unknown parameters for {self.kind} weight: {sorted(unknown)}")
        if self.dimension not in MAX_DEPTH or not 1 <= self.depth <= MAX_DEPTH[self.dimension]:
            raise StructureError(f"unsupported dimension/depth {self.dimension}/{self.depth}")

    def with_shape(self, dimension: int, depth: int) -> "WeightSpec":
        return replace(self, dimension=dimension, depth=depth)

    def to_dict(self) -> dict:
        out = {"kind": self.kind, "dimension": self.dimension, "depth": self.depth}
        out.update(self.params)
        return out

    @classmethod
    def from_dict(cls, data: dict, dimension: Optional[int] = None, depth: Optional[int] = None) -> "WeightSpec":
        data = dict(data)
        try:
            kind = data.pop("kind")
        except KeyError:
            raise DomainError("weight spec needs a 'kind'") from None
        dim = int(data.pop("dimension", dimension if dimension is not None else 1))
        dep = int(data.pop("depth", depth if depth is not None else 6))
        return cls(kind, dim, dep, data)


def generate_weight(spec: WeightSpec) -> DyadicWeight:
    d, L = spec.dimension, spec.depth
    n = 1 << L
    prm = spec.params
    if spec.kind == "constant":
        value = float(prm.get("value", 1.0))
        if not value > 0 or not math.isfinite(value):
            raise DomainError("constant weight needs a positive finite value")
        return DyadicWeight.constant(d, L, value)
    if spec.kind == "power-law":
        alpha = float(prm.get("exponent", 0.0))
        if not alpha > -d:
            raise DomainError(f"power-law exponent must exceed -{d}, got {alpha}")
        center = np.broadcast_to(np.asarray(prm.get("center", 0.0), dtype=float), (d,))
        mids = (np.indices((n,) * d) + 0.5) / n
        dist = np.sqrt(sum((mids[k] - center[k]) ** 2 for k in range(d)))
        if alpha == 0:
            return DyadicWeight.constant(d, L, 1.0)
        if alpha < 0 and np.any(dist == 0):
            raise DomainError("power-law center sits on a leaf midpoint")
        return DyadicWeight(dist ** alpha)
    if spec.kind == "lognormal":
        if "seed" not in prm:
            raise DomainError("lognormal weights need an explicit seed")
        variance = float(prm.get("variance", 1.0))
        if not variance >= 0:
            raise DomainError("lognormal variance must be nonnegative")
        rng = np.random.default_rng(int(prm["seed"]))
        return DyadicWeight(np.exp(rng.normal(0.0, math.sqrt(variance), size=(n,) * d)))
    if spec.kind == "spike":
        leaf = prm.get("leaf", 0)
        if np.ndim(leaf) == 0:
            if not 0 <= int(leaf) < n ** d:
                raise DomainError(f"spike leaf {leaf} outside the tree")
            index = np.unravel_index(int(leaf), (n,) * d)
        else:
            index = tuple(int(i) for i in leaf)
            if len(index) != d or not all(0 <= i < n for i in index):
                raise DomainError(f"spike leaf {leaf} outside the tree")
        mass = float(prm.get("mass", 1.0))
        if not mass > 0:
            raise DomainError("spike mass must be positive")
        vals = np.zeros((n,) * d)
        vals[index] = mass / 2.0 ** (-d * L)
        return DyadicWeight(vals)
    # explicit
    if "densities" not in prm:
        raise DomainError("explicit weights need 'densities'")
    return DyadicWeight.from_flat(d, L, prm["densities"], allow_zero=True)


WeightLike = Union[WeightSpec, DyadicWeight, dict]


def resolve_weight(spec: WeightLike, dimension: Optional[int] = None, depth: Optional[int] = None):
    """Return ``(weight, spec_dict)``."""
    if isinstance(spec, DyadicWeight):
        return spec, {"kind": "explicit", "dimension": spec.dimension, "depth": spec.depth}
    if isinstance(spec, dict):
        spec = WeightSpec.from_dict(spec, dimension, depth)
    return generate_weight(spec), spec.to_dict()


def resolve_collection(spec, sigma: DyadicWeight) -> SparseCollection:
    if spec is None:
        spec = {"kind": "stopping-tree"}
    if isinstance(spec, SparseCollection):
        return spec
    kind = spec.get("kind", "explicit")
    if kind == "stopping-tree":
        root = spec.get("root")
        Q0 = DyadicCube.from_dict(root) if root else None
        return build_stopping_tree(sigma, Q0).collection
    if kind == "root":
        return SparseCollection((DyadicCube.root(sigma.dimension),))
    if kind == "explicit":
        return SparseCollection.from_dict(spec)
    raise DomainError(f"unknown sparse spec kind {kind!r}")


def _sparse_spec_dict(spec, S: SparseCollection) -> dict:
    if spec is None or isinstance(spec, SparseCollection):
        return {"kind": "explicit", **S.to_dict()}
    return dict(spec)


# ---------------------------------------------------------------------------
# reports


def _clean(x):
    """Make a value JSON-safe and deterministic."""
    if isinstance(x, dict):
        return {str(k): _clean(v) for k, v in x.items()}
    if isinstance(x, (list, tuple)):
        return [_clean(v) for v in x]
    if isinstance(x, (np.floating, float)):
        x = float(x)
        if not math.isfinite(x):
            raise DomainError(f"non-finite value {x} in report")
        return x
    if isinstance(x, np.integer):
        return int(x)
    if isinstance(x, DyadicCube):
        return x.to_dict()
    return x


@dataclass
class VerificationReport:
    experiment: str
    inputs: dict
    constants: dict
    ratio: float
    witnesses: dict = field(default_factory=dict)
    seed: Optional[int] = None
    runtime: float = 0.0

    def to_dict(self, include_runtime: bool = False) -> dict:
        out = {
            "report_version": REPORT_VERSION,
            "experiment": self.experiment,
            "inputs": self.inputs,
            "constants": self.constants,
            "ratio": self.ratio,
            "witnesses": self.witnesses,
            "seed": self.seed,
        }
        if include_runtime:
            out["runtime"] = self.runtime
        return _clean(out)

    def csv_row(self) -> dict:
        row = {
            "experiment": self.experiment,
            "seed": self.seed,
            "p": self.inputs.get("p"),
            "delta": self.inputs.get("delta"),
            "depth": self.inputs.get("depth"),
            "dimension": self.inputs.get("dimension"),
        }
        for k, v in self.constants.items():
            if isinstance(v, (int, float)) and not isinstance(v, bool):
                row[k] = v
        row["ratio"] = self.ratio
        return row


def reports_to_csv(reports: list) -> str:
    rows = [r.csv_row() for r in reports]
    columns: list = []
    for row in rows:
        for k in row:
            if k not in columns:
                columns.append(k)
    buf = io.StringIO()
    writer = csv.DictWriter(buf, fieldnames=columns, lineterminator="\n")
    writer.writeheader()
    for row in rows:
        writer.writerow({k: repr(v) if isinstance(v, float) else v for k, v in row.items()})
    return buf.getvalue()


def _require_mass(weight: DyadicWeight, name: str) -> None:
    if weight.mass() == 0.0:
        raise DegenerateInputError(f"weight {name} is identically zero")


def _setup(sigma_spec, w_spec, p, dimension=None, depth=None):
    check_p(p)
    sigma, sdict = resolve_weight(sigma_spec, dimension, depth)
    w, wdict = resolve_weight(w_spec, sigma.dimension, sigma.depth)
    sigma.check_same_shape(w)
    _require_mass(sigma, "sigma")
    _require_mass(w, "w")
    return sigma, w, sdict, wdict


def _inputs(sdict, wdict, p, delta, sigma, extra=None) -> dict:
    out = {"sigma": sdict, "w": wdict, "p": p, "delta": delta,
           "dimension": sigma.dimension, "depth": sigma.depth}
    if extra:
        out.update(extra)
    return out


def _require_sparse(S: SparseCollection) -> dict:
    cert = is_sparse(S)
    if not cert:
        raise DomainError(f"collection is not sparse: ratio {cert.worst_ratio} at {cert.worst_cube}")
    return cert.to_dict()


def _safe_ratio(num: float, den: float) -> float:
    if num == 0.0:
        return 0.0
    return num / den


# ---------------------------------------------------------------------------
# checkers


def check_max_theorem(sigma_spec: WeightLike, w_spec: WeightLike, p: float, delta: float,
                      seed: int = 0, trials: int = DEFAULT_TRIALS) -> VerificationReport:
    """Maximal operator against the joint bump.

    ``ratio`` is the indicator-testing constant over ``joint_bump^(1/p)`` (the
    quantity the stopping-time argument controls); ``norm_ratio`` uses the
    full norm lower bound instead.
    """
    t0 = time.perf_counter()
    sigma, w, sdict, wdict = _setup(sigma_spec, w_spec, p)
    eps = EpsilonFn.joint(delta)
    bump = joint_bump(sigma, w, p, eps)
    norm = maximal_norm(sigma, w, p, trials=trials, seed=seed)
    testing = norm.details["testing"]
    root_bump = bump.value ** (1.0 / p)
    tree = build_stopping_tree(sigma)
    classes = pigeonhole(tree.collection, sigma, w, p, eps, "max-thm")
    top_band = max((c.a for c in classes if c.a is not None), default=None)
    constants = {
        "joint_bump": bump.value,
        "maximal_testing": testing,
        "maximal_norm": norm.value,
        "maximal_norm_kind": norm.kind,
        "norm_ratio": _safe_ratio(norm.value, root_bump),
        "stopping_cubes": len(tree.cubes),
        "pigeonhole_classes": len(classes),
        "max_band_a": top_band,
    }
    witnesses = {
        "joint_bump": bump.witness,
        "maximal_testing": norm.details["testing_witness"],
        "maximal_norm_source": norm.details["source"],
    }
    return VerificationReport("max-thm", _inputs(sdict, wdict, p, delta, sigma), constants,
                              _safe_ratio(testing, root_bump), witnesses, seed,
                              time.perf_counter() - t0)


def _sparse_side(S, sigma, w, p, seed, trials, tol):
    norm = sparse_norm(S, sigma, w, p, trials=trials, tol=tol, seed=seed)
    testing = sawyer_testing(S, sigma, w, p)
    return norm, testing


def check_thm_one(sigma_spec: WeightLike, w_spec: WeightLike, p: float, delta: float,
                  sparse_spec=None, seed: int = 0, trials: int = DEFAULT_TRIALS,
                  tol: float = DEFAULT_TOL) -> VerificationReport:
    """Sparse operator norm against the product bump (both weights bumped)."""
    t0 = time.perf_counter()
    sigma, w, sdict, wdict = _setup(sigma_spec, w_spec, p)
    S = resolve_collection(sparse_spec, sigma)
    cert = _require_sparse(S)
    eps = EpsilonFn.joint(delta)
    bump = product_bump(sigma, w, p, eps)
    norm, testing = _sparse_side(S, sigma, w, p, seed, trials, tol)
    constants = {
        "product_bump": bump.value,
        "sparse_norm": norm.value,
        "sparse_norm_kind": norm.kind,
        "testing_forward": testing.forward,
        "testing_dual": testing.dual,
        "sparse_cubes": len(S),
        "sparsity_worst_ratio": cert["worst_ratio"],
    }
    witnesses = {"product_bump": bump.witness, "testing": testing.to_dict()}
    inputs = _inputs(sdict, wdict, p, delta, sigma, {"sparse": _sparse_spec_dict(sparse_spec, S)})
    return VerificationReport("thm-one", inputs, constants,
                              _safe_ratio(norm.value, bump.value ** (1.0 / p)), witnesses, seed,
                              time.perf_counter() - t0)


def check_thm_two(sigma_spec: WeightLike, w_spec: WeightLike, p: float, delta: float,
                  sparse_spec=None, seed: int = 0, trials: int = DEFAULT_TRIALS,
                  tol: float = DEFAULT_TOL) -> VerificationReport:
    """Sparse operator norm against the separated sum of two joint bumps."""
    t0 = time.perf_counter()
    sigma, w, sdict, wdict = _setup(sigma_spec, w_spec, p)
    S = resolve_collection(sparse_spec, sigma)
    cert = _require_sparse(S)
    q = conjugate_exponent(p)
    forward_bump = joint_bump(sigma, w, p, EpsilonFn.separated(p, delta))
    dual_bump = joint_bump(w, sigma, q, EpsilonFn.separated(q, delta))
    separated = forward_bump.value ** (1.0 / p) + dual_bump.value ** (1.0 / q)
    prod = product_bump(sigma, w, p, EpsilonFn.joint(delta))
    norm, testing = _sparse_side(S, sigma, w, p, seed, trials, tol)
    constants = {
        "joint_bump_forward": forward_bump.value,
        "joint_bump_dual": dual_bump.value,
        "separated_sum": separated,
        "product_bump": prod.value,
        "product_bump_root": prod.value ** (1.0 / p),
        "sparse_norm": norm.value,
        "sparse_norm_kind": norm.kind,
        "testing_forward": testing.forward,
        "testing_dual": testing.dual,
        "sparse_cubes": len(S),
        "sparsity_worst_ratio": cert["worst_ratio"],
    }
    witnesses = {"joint_bump_forward": forward_bump.witness, "joint_bump_dual": dual_bump.witness,
                 "product_bump": prod.witness, "testing": testing.to_dict()}
    inputs = _inputs(sdict, wdict, p, delta, sigma, {"sparse": _sparse_spec_dict(sparse_spec, S)})
    return VerificationReport("thm-two", inputs, constants, _safe_ratio(norm.value, separated),
                              witnesses, seed, time.perf_counter() - t0)


def check_lemma_ap_ainfty(sigma_spec: WeightLike, w_spec: WeightLike, p: float, sparse_spec=None,
                          Q0: Optional[DyadicCube] = None, seed: Optional[int] = None,
                          delta: Optional[float] = None) -> VerificationReport:
    """``int_{Q0} (S(sigma 1_{Q0}))^p dw`` against ``A_p(S) A_infty(S) sigma(Q0)``."""
    t0 = time.perf_counter()
    sigma, w, sdict, wdict = _setup(sigma_spec, w_spec, p)
    if Q0 is None:
        Q0 = DyadicCube.root(sigma.dimension)
    if sigma.mass(Q0) == 0.0:
        raise DegenerateInputError(f"sigma has no mass on {Q0}")
    if sparse_spec is None:
        sparse_spec = {"kind": "stopping-tree", "root": Q0.to_dict()}
    S = resolve_collection(sparse_spec, sigma)
    outside = [Q for Q in S.cubes if not Q0.contains(Q)]
    if outside:
        raise StructureError(f"cube {outside[0]} of the collection is not inside {Q0}")
    cert = _require_sparse(S)
    local = apply_sparse(S, sigma.restrict(Q0).values).values
    sl = Q0.slices(sigma.depth)
    lhs = float(np.sum(local[sl] ** p * w.values[sl])) * sigma.leaf_volume
    ap = sparse_Ap(sigma, w, p, S)
    ainf = sparse_Ainfty(sigma, S)
    rhs = ap.value * ainf.value * sigma.mass(Q0)
    constants = {
        "lhs": lhs,
        "A_p": ap.value,
        "A_infty": ainf.value,
        "sigma_Q0": sigma.mass(Q0),
        "rhs": rhs,
        "sparse_cubes": len(S),
        "sparsity_worst_ratio": cert["worst_ratio"],
    }
    witnesses = {"A_p": ap.witness, "A_infty": ainf.witness, "Q0": Q0}
    inputs = _inputs(sdict, wdict, p, delta, sigma, {"sparse": _sparse_spec_dict(sparse_spec, S)})
    return VerificationReport("lemma", inputs, constants, _safe_ratio(lhs, rhs), witnesses, seed,
                              time.perf_counter() - t0)


def run_checker(target: str, sigma, w, p: float, delta: float, seed: int = 0,
                trials: int = DEFAULT_TRIALS, sparse_spec=None, tol: float = DEFAULT_TOL) -> VerificationReport:
    if target == "max-thm":
        return check_max_theorem(sigma, w, p, delta, seed=seed, trials=trials)
    if target == "thm-one":
        return check_thm_one(sigma, w, p, delta, sparse_spec, seed=seed, trials=trials, tol=tol)
    if target == "thm-two":
        return check_thm_two(sigma, w, p, delta, sparse_spec, seed=seed, trials=trials, tol=tol)
    if target == "lemma":
        return check_lemma_ap_ainfty(sigma, w, p, sparse_spec, seed=seed, delta=delta)
    raise DomainError(f"unknown target {target!r}; expected one of {TARGETS}")


# ---------------------------------------------------------------------------
# canonical seeded suites

SUITE_SIZES = {"max-thm": 500, "thm-one": 200, "thm-two": 200, "lemma": 500}
SUITE_P = (1.5, 2.0, 3.0)
SUITE_DELTA = (0.5, 1.0)


def canonical_instance(i: int, base_seed: int = 0) -> dict:
    """Instance ``i`` of the canonical suite: depths 4-8, p in {1.5, 2, 3}, delta in {0.5, 1}."""
    depth = 4 + i % 5
    p = SUITE_P[(i // 5) % 3]
    delta = SUITE_DELTA[(i // 15) % 2]
    dimension = 2 if depth <= 5 and (i // 30) % 3 == 2 else 1
    rng = np.random.default_rng([base_seed, i])
    family = (i // 2) % 3
    variances = (0.25, 1.0, 2.25, 4.0)

    def lognormal(offset):
        return {"kind": "lognormal", "seed": int(base_seed * 100_003 + 2 * i + offset),
                "variance": variances[int(rng.integers(4))]}

    def power():
        hi = min(2.0, dimension * (p - 1.0)) - 0.05
        return {"kind": "power-law", "exponent": round(float(rng.uniform(-0.9, hi)), 6),
                "center": [round(float(c), 6) for c in rng.uniform(0.0, 1.0, dimension)]}

    if family == 0:
        sigma, w = lognormal(0), lognormal(1)
    elif family == 1:
        sigma, w = power(), lognormal(1)
    else:
        sigma, w = lognormal(0), power()
    for spec in (sigma, w):
        spec.update(dimension=dimension, depth=depth)
    return {"sigma": sigma, "w": w, "p": p, "delta": delta, "seed": int(base_seed * 1000 + i)}


def run_suite(target: str, n: Optional[int] = None, base_seed: int = 0, threads: Optional[int] = None,
              trials: int = DEFAULT_TRIALS) -> list:
    if n is None:
        n = SUITE_SIZES[target]

    def one(i):
        inst = canonical_instance(i, base_seed)
        return run_checker(target, inst["sigma"], inst["w"], inst["p"], inst["delta"],
                           seed=inst["seed"], trials=trials)

    return ordered_map(one, range(n), threads)


# ---------------------------------------------------------------------------
# adversarial search


def _objective(target, sigma, w, p, delta, trials, seed):
    if target == "max-thm":
        trials = 0  # the ratio uses the testing constant only
    try:
        return run_checker(target, sigma, w, p, delta, seed=seed, trials=trials).ratio
    except (DegenerateInputError, DomainError):
        return -math.inf


def sharpness_search(target: str, p: float, delta: float, depth: int, budget: int, seed: int,
                     dimension: int = 1, trials: int = 2, step: float = 0.5,
                     cooling: float = 0.995, probes: int = 100) -> VerificationReport:
    """Simulated annealing over the log-densities of both weights, maximizing the checker ratio.

    Starts from ``sigma = w = 1``.  Proposals add a Gaussian bump to the log
    density of one weight on one random dyadic cube.  The initial temperature
    is the standard deviation of the ratio over ``probes`` random instances,
    cooled geometrically by ``cooling`` per step.
    """
    if target not in TARGETS:
        raise DomainError(f"unknown target {target!r}; expected one of {TARGETS}")
    if budget < 0:
        raise DomainError("budget must be nonnegative")
    check_p(p)
    t0 = time.perf_counter()
    rng = np.random.default_rng(seed)
    shape = (1 << depth,) * dimension
    logs = [np.zeros(shape), np.zeros(shape)]

    def evaluate(pair):
        return _objective(target, DyadicWeight(np.exp(pair[0])), DyadicWeight(np.exp(pair[1])),
                          p, delta, trials, seed)

    current = evaluate(logs)
    start_ratio = current
    best, best_logs, best_step, accepted = current, [a.copy() for a in logs], 0, 0
    temperature = 0.0
    if budget > 0:
        samples = [evaluate([rng.normal(0.0, 1.0, shape), rng.normal(0.0, 1.0, shape)])
                   for _ in range(probes)]
        finite = [s for s in samples if math.isfinite(s)]
        temperature = float(np.std(finite)) if finite else 1.0
        temperature = temperature if temperature > 0 else 1e-3
    t = temperature
    for k in range(1, budget + 1):
        which = int(rng.integers(2))
        level = int(rng.integers(depth + 1))
        index = tuple(int(i) for i in rng.integers(0, 1 << level, size=dimension))
        cube = DyadicCube(level, index)
        proposal = [a.copy() for a in logs]
        proposal[which][cube.slices(depth)] += rng.normal(0.0, step)
        value = evaluate(proposal)
        delta_v = value - current
        if delta_v >= 0 or rng.random() < math.exp(delta_v / t):
            logs, current = proposal, value
            accepted += 1
            if current > best:
                best, best_logs, best_step = current, [a.copy() for a in logs], k
        t *= cooling
    sigma, w = DyadicWeight(np.exp(best_logs[0])), DyadicWeight(np.exp(best_logs[1]))
    report = run_checker(target, sigma, w, p, delta, seed=seed, trials=trials)
    report.experiment = f"search:{target}"
    report.inputs.update({
        "sigma": {"kind": "explicit", "dimension": dimension, "depth": depth,
                  "densities": sigma.values.ravel().tolist()},
        "w": {"kind": "explicit", "dimension": dimension, "depth": depth,
              "densities": w.values.ravel().tolist()},
        "budget": budget,
    })
    report.constants.update({
        "start_ratio": start_ratio,
        "initial_temperature": temperature,
        "accepted": accepted,
        "best_step": best_step,
    })
    report.seed = seed
    report.runtime = time.perf_counter() - t0
    return report
