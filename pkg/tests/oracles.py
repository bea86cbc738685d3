"""Brute-force reference computations built on raw numpy loops.

Nothing here calls into the library's pyramids or fast passes; cubes are
plain ``(level, index)`` tuples and averages are direct leaf sums.
"""

import itertools
import math

import numpy as np


def cube_slices(level, index, depth):
    k = depth - level
    return tuple(slice(i << k, (i + 1) << k) for i in index)


def all_cubes(dimension, depth):
    for level in range(depth + 1):
        for index in itertools.product(range(1 << level), repeat=dimension):
            yield level, index


def contains(outer, inner):
    (lo, io), (li, ii) = outer, inner
    if li < lo:
        return False
    return all((b >> (li - lo)) == a for a, b in zip(io, ii))


def average(values, level, index):
    depth = int(round(math.log2(values.shape[0])))
    return float(np.mean(values[cube_slices(level, index, depth)]))


def maximal(values, Q=None):
    """Per leaf of Q: max over dyadic R with leaf in R in Q of the average; 0 outside Q."""
    d = values.ndim
    depth = int(round(math.log2(values.shape[0])))
    Q = Q or (0, (0,) * d)
    out = np.zeros_like(values, dtype=float)
    for leaf in itertools.product(range(1 << depth), repeat=d):
        if not contains(Q, (depth, leaf)):
            continue
        best = -math.inf
        for level in range(Q[0], depth + 1):
            index = tuple(i >> (depth - level) for i in leaf)
            best = max(best, average(values, level, index))
        out[leaf] = best
    return out


def entropy(values, Q=None):
    d = values.ndim
    depth = int(round(math.log2(values.shape[0])))
    Q = Q or (0, (0,) * d)
    sl = cube_slices(*Q, depth)
    mass = float(np.sum(values[sl]))
    if mass == 0:
        return 1.0
    return max(1.0, float(np.sum(maximal(values, Q)[sl])) / mass)


def joint_eps(delta):
    return lambda t: (1.0 / delta) * (1.0 + math.log(t)) ** (1.0 + delta)


def separated_eps(p, delta):
    return lambda t: delta ** (-p) * (1.0 + math.log(t)) ** (p * (1.0 + delta))


def joint_bump(sigma, w, p, eps):
    best, witness = -math.inf, None
    d = sigma.ndim
    depth = int(round(math.log2(sigma.shape[0])))
    for Q in all_cubes(d, depth):
        rho = entropy(sigma, Q)
        val = rho * eps(rho) * average(sigma, *Q) ** (p - 1) * average(w, *Q)
        if val > best:
            best, witness = val, Q
    return best, witness


def product_bump(sigma, w, p, eps):
    best, witness = -math.inf, None
    d = sigma.ndim
    depth = int(round(math.log2(sigma.shape[0])))
    for Q in all_cubes(d, depth):
        rs, rw = entropy(sigma, Q), entropy(w, Q)
        val = average(sigma, *Q) ** (p - 1) * rs * eps(rs) * average(w, *Q) * (rw * eps(rw)) ** (p - 1)
        if val > best:
            best, witness = val, Q
    return best, witness


def sparse_apply(cubes, f):
    depth = int(round(math.log2(f.shape[0])))
    out = np.zeros_like(f, dtype=float)
    for level, index in cubes:
        sl = cube_slices(level, index, depth)
        out[sl] += np.mean(f[sl])
    return out


def sparse_matrix(cubes, n_leaves, depth):
    """Dense d=1 matrix of ``g -> S g``."""
    K = np.zeros((n_leaves, n_leaves))
    for level, (i,) in cubes:
        k = depth - level
        block = slice(i << k, (i + 1) << k)
        K[block, block] += 1.0 / (1 << k)
    return K


def random_weight(rng, dimension, depth, zero_fraction=0.0, variance=1.0):
    vals = np.exp(rng.normal(0.0, math.sqrt(variance), size=(1 << depth,) * dimension))
    if zero_fraction:
        vals[rng.random(vals.shape) < zero_fraction] = 0.0
        if not vals.any():
            vals.flat[0] = 1.0
    return vals
