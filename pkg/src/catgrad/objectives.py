"""Objectives ``f(D)`` over joint one-hot samples.

Every objective maps a batch of one-hot matrices ``D`` with shape
``(..., L, n)`` to values ``(...)`` and to ``df/dD`` with the same shape as
``D``. The gradient is taken with respect to the relaxed (continuous) one-hot
coordinates, which is what straight-through style estimators backpropagate.
"""
from dataclasses import dataclass, field

import numpy as np

from catgrad.errors import CapacityError, InvalidArgumentError

ENUMERATION_CAP = 2 ** 20


@dataclass(frozen=True)
class ObjectiveEval:
    value: float
    grad_onehot: np.ndarray


class Objective:
    L: int
    n: int

    def value_and_grad(self, D):
        raise NotImplementedError

    def value(self, D):
        return self.value_and_grad(D)[0]

    def evaluate(self, D):
        """Single-sample evaluation returning an :class:`ObjectiveEval`."""
        D = self._check(D)
        val, grad = self.value_and_grad(D)
        return ObjectiveEval(float(val), grad)

    def _check(self, D):
        D = np.asarray(D, dtype=float)
        if D.shape[-2:] != (self.L, self.n):
            raise InvalidArgumentError(
                f"expected one-hot rows of shape ({self.L}, {self.n}), got {D.shape[-2:]}"
            )
        return D


@dataclass(frozen=True, eq=False)
class PolynomialObjective(Objective):
    """``mean_i |<D_i, v> - c_i|^p``, the polynomial-programming loss.

    With the default ``values=(0, 1)`` each variable is a Bernoulli ``X_i``
    encoded as a two-category one-hot.
    """

    c: np.ndarray
    p: float = 2.0
    values: np.ndarray = field(default_factory=lambda: np.array([0.0, 1.0]))

    def __post_init__(self):
        c = np.atleast_1d(np.asarray(self.c, dtype=float))
        v = np.asarray(self.values, dtype=float)
        if not self.p > 1:
            raise InvalidArgumentError(f"p must be > 1, got {self.p!r}")
        if not np.all(np.isfinite(c)):
            raise InvalidArgumentError("targets c must be finite")
        if v.ndim != 1 or v.size < 2:
            raise InvalidArgumentError("category values must be a vector of length >= 2")
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "values", v)
        object.__setattr__(self, "p", float(self.p))

    @classmethod
    def filled(cls, L, c=0.45, p=2.0, values=(0.0, 1.0)):
        return cls(np.full(L, float(c)), p, np.asarray(values, dtype=float))

    @property
    def L(self):
        return self.c.shape[0]

    @property
    def n(self):
        return self.values.shape[0]

    def value_and_grad(self, D):
        D = self._check(D)
        r = D @ self.values - self.c
        a = np.abs(r)
        value = np.mean(a ** self.p, axis=-1)
        # sign(0) == 0 keeps the derivative at r == 0 equal to its limit 0.
        dx = (self.p / self.L) * np.sign(r) * a ** (self.p - 1.0)
        return value, dx[..., None] * self.values

    def expected_value(self, pi):
        """Exact ``E[f]`` for independent rows ``pi`` (L, n); no enumeration needed."""
        per_cat = np.abs(self.values[None, :] - self.c[:, None]) ** self.p
        return float(np.mean(np.sum(pi * per_cat, axis=-1)))

    def optimum(self):
        per_cat = np.abs(self.values[None, :] - self.c[:, None]) ** self.p
        return float(np.mean(per_cat.min(axis=-1)))


@dataclass(frozen=True, eq=False)
class CubicObjective(Objective):
    """Polynomial of degree <= 3 in the flattened one-hot coordinates ``d``.

    ``f(d) = const + b.d + 1/2 d'Qd + 1/6 T[d, d, d]`` with ``Q`` and ``T``
    symmetrized on construction, so ``df/dd = b + Qd + 1/2 T[d, d, :]``.
    """

    L: int
    n: int
    b: np.ndarray = None
    Q: np.ndarray = None
    T: np.ndarray = None
    const: float = 0.0

    def __post_init__(self):
        N = self.L * self.n
        b = np.zeros(N) if self.b is None else np.asarray(self.b, dtype=float).reshape(N)
        Q = np.zeros((N, N)) if self.Q is None else np.asarray(self.Q, dtype=float)
        if Q.shape != (N, N):
            raise InvalidArgumentError(f"Q must be {N}x{N}")
        Q = 0.5 * (Q + Q.T)
        T = None
        if self.T is not None:
            T = np.asarray(self.T, dtype=float)
            if T.shape != (N, N, N):
                raise InvalidArgumentError(f"T must be {N}x{N}x{N}")
            T = sum(np.transpose(T, perm) for perm in
                    [(0, 1, 2), (0, 2, 1), (1, 0, 2), (1, 2, 0), (2, 0, 1), (2, 1, 0)]) / 6.0
        object.__setattr__(self, "b", b)
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "T", T)

    @classmethod
    def random(cls, rng, L, n, degree=3, scale=1.0):
        N = L * n
        b = rng.uniform(-scale, scale, N)
        Q = rng.uniform(-scale, scale, (N, N)) if degree >= 2 else None
        T = rng.uniform(-scale, scale, (N, N, N)) if degree >= 3 else None
        return cls(L, n, b, Q, T, float(rng.uniform(-scale, scale)))

    def value_and_grad(self, D):
        D = self._check(D)
        lead = D.shape[:-2]
        d = D.reshape(lead + (self.L * self.n,))
        Qd = d @ self.Q
        value = self.const + d @ self.b + 0.5 * np.sum(Qd * d, axis=-1)
        grad = self.b + Qd
        if self.T is not None:
            Tdd = np.einsum("...i,...j,ijk->...k", d, d, self.T)
            value = value + np.sum(Tdd * d, axis=-1) / 6.0
            grad = grad + 0.5 * Tdd
        return value, grad.reshape(lead + (self.L, self.n))


@dataclass(frozen=True, eq=False)
class QuadraticOracleObjective(Objective):
    """``1/2 d'Qd + b'd`` over the flattened one-hot matrix ``d``."""

    Q: np.ndarray
    b: np.ndarray
    L: int
    n: int
    seed: int = None

    def __post_init__(self):
        N = self.L * self.n
        Q = np.asarray(self.Q, dtype=float)
        b = np.asarray(self.b, dtype=float).reshape(-1)
        if Q.shape != (N, N) or b.shape != (N,):
            raise InvalidArgumentError(f"Q must be {N}x{N} and b length {N}")
        if not np.allclose(Q, Q.T, rtol=0.0, atol=1e-12):
            raise InvalidArgumentError("Q must be symmetric")
        object.__setattr__(self, "Q", Q)
        object.__setattr__(self, "b", b)

    @classmethod
    def random(cls, seed, L, n, scale=1.0):
        rng = np.random.default_rng(seed)
        N = L * n
        A = rng.uniform(-scale, scale, (N, N))
        return cls(0.5 * (A + A.T), rng.uniform(-scale, scale, N), L, n, seed)

    def value_and_grad(self, D):
        D = self._check(D)
        lead = D.shape[:-2]
        d = D.reshape(lead + (self.L * self.n,))
        Qd = d @ self.Q
        value = 0.5 * np.sum(Qd * d, axis=-1) + d @ self.b
        return value, (Qd + self.b).reshape(lead + (self.L, self.n))


def poly_eval(D, obj):
    return obj.evaluate(D)


def quadratic_eval(D, obj):
    return obj.evaluate(D)


def joint_outcomes(L, n, cap=ENUMERATION_CAP):
    """All ``n**L`` category assignments, shape ``(n**L, L)``, in lexicographic order."""
    total = n ** L
    if total > cap:
        raise CapacityError(total, cap)
    return np.indices((n,) * L).reshape(L, -1).T


def joint_one_hots(L, n, cap=ENUMERATION_CAP):
    idx = joint_outcomes(L, n, cap)
    out = np.zeros((idx.shape[0], L, n))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def joint_probabilities(pi, idx):
    """``P(D)`` for each enumerated assignment ``idx`` under independent rows ``pi``."""
    L = pi.shape[0]
    return np.prod(pi[np.arange(L), idx], axis=-1)


def enumerate_objective(obj, L=None, n=None, visitor=None, cap=ENUMERATION_CAP):
    """Visit every joint one-hot outcome with its :class:`ObjectiveEval`.

    Without a ``visitor`` a list of ``(D, ObjectiveEval)`` pairs is returned.
    """
    L = obj.L if L is None else L
    n = obj.n if n is None else n
    Ds = joint_one_hots(L, n, cap)
    values, grads = obj.value_and_grad(Ds)
    out = [] if visitor is None else None
    for D, v, g in zip(Ds, values, grads):
        ev = ObjectiveEval(float(v), g)
        if visitor is None:
            out.append((D, ev))
        else:
            visitor(D, ev)
    return out
