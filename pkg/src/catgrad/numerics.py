"""Forward Euler and Heun increments, order measurement, finite differences.

Approximating ``f(I_i) - f(I_j)`` along the segment ``x I_i + (1 - x) I_j``
is a one-step integration of ``g'`` on ``[0, 1]``: forward Euler gives the
straight-through approximation and Heun's trapezoid gives the second-order
one. This module measures those orders on scalar paths.
"""
import enum
import math
from dataclasses import dataclass
from typing import Callable, List, Optional

import numpy as np

from catgrad.errors import InvalidArgumentError

DEFAULT_FD_STEP = 1e-5
_UNDERFLOW = 1e-12


class Method(str, enum.Enum):
    EULER = "euler"
    HEUN = "heun"


@dataclass(frozen=True)
class ScalarPath:
    g: Callable[[float], float]
    g_prime: Callable[[float], float]
    t0: float = 0.0
    t1: float = 1.0

    def __post_init__(self):
        if not self.t0 < self.t1:
            raise InvalidArgumentError("path requires t0 < t1")

    def increment(self):
        return self.g(self.t1) - self.g(self.t0)

    def split(self, pieces):
        edges = np.linspace(self.t0, self.t1, pieces + 1)
        return [ScalarPath(self.g, self.g_prime, float(a), float(b))
                for a, b in zip(edges[:-1], edges[1:])]


@dataclass
class OrderReport:
    method: Method
    step_sizes: List[float]
    errors: List[float]
    observed_order: Optional[float]

    @property
    def defined(self):
        return self.observed_order is not None


def euler_increment(path):
    return path.g_prime(path.t0) * (path.t1 - path.t0)


def heun_increment(path):
    return 0.5 * (path.g_prime(path.t0) + path.g_prime(path.t1)) * (path.t1 - path.t0)


_INCREMENTS = {Method.EULER: euler_increment, Method.HEUN: heun_increment}


def composed_increment(method, path, pieces):
    step = _INCREMENTS[Method(method)]
    return math.fsum(step(p) for p in path.split(pieces))


def convergence_order(method, path, halvings=5, base_pieces=4):
    """Global order of the composed method under repeated step halving.

    The order is the mean of ``log2(err(h) / err(h/2))`` across successive
    halvings; it is ``None`` when any error is below ``1e-12``, i.e. the
    method is exact on this path and no order can be read off.
    """
    if halvings < 3:
        raise InvalidArgumentError("halvings must be >= 3")
    method = Method(method)
    exact = path.increment()
    width = path.t1 - path.t0
    sizes, errors = [], []
    for level in range(halvings + 1):
        pieces = base_pieces * 2 ** level
        sizes.append(width / pieces)
        errors.append(abs(composed_increment(method, path, pieces) - exact))
    if min(errors) < _UNDERFLOW:
        order = None
    else:
        order = float(np.mean([math.log2(a / b) for a, b in zip(errors[:-1], errors[1:])]))
    return OrderReport(method, sizes, errors, order)


def finite_diff_grad(f, x, h=DEFAULT_FD_STEP):
    """Central-difference gradient of scalar ``f`` at ``x`` (any shape)."""
    if not h > 0:
        raise InvalidArgumentError("h must be positive")
    x = np.array(x, dtype=float)
    grad = np.empty_like(x)
    flat = x.reshape(-1)
    gflat = grad.reshape(-1)
    for i in range(flat.size):
        old = flat[i]
        flat[i] = old + h
        fp = f(x)
        flat[i] = old - h
        fm = f(x)
        flat[i] = old
        gflat[i] = (fp - fm) / (2.0 * h)
    return grad
