"""Canonical small-instance fixtures replayed by ``entropylab selftest``.

A fixture file is JSON: ``{"fixtures": [{"name", "op", "args", "expected", "tol"}]}``.
``expected`` is a number or a list of numbers compared with relative
tolerance ``tol`` (absolute near zero).
"""

from __future__ import annotations

import json
import math
from dataclasses import dataclass

import numpy as np

from . import constants, dyadic, normlab, sparse, verify
from .dyadic import DyadicCube, DyadicWeight, EpsilonFn, LeafFunction


class FixtureError(Exception):
    pass


@dataclass
class FixtureResult:
    name: str
    passed: bool
    message: str = ""


def _weight(args, key="sigma"):
    spec = args[key]
    if isinstance(spec, dict):
        return DyadicWeight.from_flat(spec.get("dimension", 1), spec["depth"], spec["densities"],
                                      allow_zero=True)
    raise FixtureError(f"weight {key} must be an object")


def _cube(data):
    return DyadicCube.from_dict(data) if data is not None else DyadicCube.root(1)


def _collection(args, sigma):
    spec = args.get("sparse", {"kind": "stopping-tree"})
    return verify.resolve_collection(spec, sigma)


def _eps(args):
    e = args.get("eps", {"flavor": "joint", "delta": 1.0})
    return EpsilonFn(e["flavor"], e["delta"], e.get("p"))


OPS = {
    "cube_average": lambda a: dyadic.cube_average(_weight(a), _cube(a.get("cube"))),
    "weighted_average": lambda a: dyadic.weighted_average(
        LeafFunction(np.asarray(a["f"], dtype=float)), _weight(a), _cube(a.get("cube"))),
    "local_maximal": lambda a: dyadic.local_maximal(_weight(a), _cube(a.get("cube"))).values.ravel().tolist(),
    "entropy": lambda a: dyadic.entropy(_weight(a), _cube(a.get("cube"))),
    "bumped_entropy": lambda a: dyadic.bumped_entropy(_weight(a), _cube(a.get("cube")), _eps(a)),
    "epsilon_eval": lambda a: dyadic.epsilon_eval(_eps(a), a["t"]),
    "normalization": lambda a: dyadic.normalization_integral(_eps(a), math.exp(a["log_upper"])),
    "joint_bump": lambda a: constants.joint_bump(_weight(a), _weight(a, "w"), a["p"], _eps(a)).value,
    "product_bump": lambda a: constants.product_bump(_weight(a), _weight(a, "w"), a["p"], _eps(a)).value,
    "sparse_Ainfty": lambda a: constants.sparse_Ainfty(_weight(a), _collection(a, _weight(a))).value,
    "stopping_cubes": lambda a: [
        [Q.level, *Q.index] for Q in sparse.build_stopping_tree(_weight(a)).cubes
    ],
    "apply_sparse": lambda a: sparse.apply_sparse(
        _collection(a, _weight(a)), _weight(a)).values.ravel().tolist(),
    "pairing": lambda a: sparse.pairing(_collection(a, _weight(a)), _weight(a), _weight(a, "w"),
                                        np.asarray(a["f"], float), np.asarray(a["g"], float)),
    "maximal_domination": lambda a: sparse.maximal_domination_check(_weight(a)).max_ratio,
    "sparse_norm_p2": lambda a: normlab.sparse_norm_p2(
        _collection(a, _weight(a)), _weight(a), _weight(a, "w")).value,
    "sparse_norm_general": lambda a: normlab.sparse_norm_general(
        _collection(a, _weight(a)), _weight(a), _weight(a, "w"), a["p"], seed=0).value,
    "sawyer_testing": lambda a: list(
        (lambda t: (t.forward, t.dual))(normlab.sawyer_testing(
            _collection(a, _weight(a)), _weight(a), _weight(a, "w"), a["p"]))),
    "carleson_testing": lambda a: normlab.carleson_constant(
        _weight(a), _collection(a, _weight(a)), a["p"]).testing,
    "maximal_testing": lambda a: normlab.maximal_testing(_weight(a), _weight(a, "w"), a["p"])[0],
    "check": lambda a: verify.run_checker(a["target"], _weight(a), _weight(a, "w"), a["p"],
                                          a.get("delta", 1.0), sparse_spec=a.get("sparse")).ratio,
}


def _compare(got, expected, tol):
    g = np.asarray(got, dtype=float).ravel()
    e = np.asarray(expected, dtype=float).ravel()
    if g.shape != e.shape:
        return False, f"shape {g.shape} != expected {e.shape}"
    err = np.abs(g - e) / np.maximum(np.abs(e), 1.0)
    worst = float(np.max(err)) if err.size else 0.0
    return worst <= tol, f"max relative delta {worst:.3e} > tol {tol:g} (got {g.tolist()}, expected {e.tolist()})"


def load_fixtures(path) -> list:
    try:
        with open(path) as fh:
            data = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        raise FixtureError(str(exc)) from exc
    items = data.get("fixtures") if isinstance(data, dict) else None
    if not isinstance(items, list) or not items:
        raise FixtureError("no 'fixtures' list")
    for item in items:
        if not isinstance(item, dict) or not {"name", "op", "args", "expected"} <= set(item):
            raise FixtureError(f"malformed fixture entry {item!r}")
    return items


def run_fixtures(path) -> list:
    out = []
    for item in load_fixtures(path):
        name = item["name"]
        op = OPS.get(item["op"])
        if op is None:
            out.append(FixtureResult(name, False, f"unknown op {item['op']!r}"))
            continue
        try:
            got = op(item["args"])
        except Exception as exc:  # a fixture failure, not a crash
            out.append(FixtureResult(name, False, f"{type(exc).__name__}: {exc}"))
            continue
        ok, msg = _compare(got, item["expected"], float(item.get("tol", 1e-12)))
        out.append(FixtureResult(name, ok, "" if ok else msg))
    return out
