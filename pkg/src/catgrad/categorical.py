"""Categorical-distribution primitives.

Logits are float arrays whose last axis indexes the ``n`` categories; a
``(L, n)`` array holds one row per independent latent variable. Functions
broadcast over leading axes unless stated otherwise.
"""
from dataclasses import dataclass

import numpy as np

from catgrad import kernels
from catgrad.errors import InvalidArgumentError

_TINY = np.nextafter(0.0, 1.0)


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream keyed by ``(seed, stream_id)``.

    Distinct stream ids give statistically independent generators, so
    callers can hand one stream to each step, cell or worker without the
    draws depending on execution order.
    """

    seed: int
    stream_id: int = 0

    def generator(self):
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF,
                                     self.stream_id & 0xFFFFFFFFFFFFFFFF])
        return np.random.Generator(np.random.PCG64(ss))

    def child(self, stream_id):
        """Derive a sub-stream; children of different parents never collide."""
        ss = np.random.SeedSequence([self.seed & 0xFFFFFFFFFFFFFFFF,
                                     self.stream_id & 0xFFFFFFFFFFFFFFFF,
                                     stream_id & 0xFFFFFFFFFFFFFFFF])
        return RngStream(int(ss.generate_state(1, np.uint64)[0]), 0)


def _as_generator(rng):
    if isinstance(rng, RngStream):
        return rng.generator()
    if isinstance(rng, np.random.Generator):
        return rng
    raise InvalidArgumentError(f"expected RngStream or numpy Generator, got {type(rng)!r}")


def _check_finite(x, name):
    x = np.asarray(x, dtype=float)
    if not np.all(np.isfinite(x)):
        raise InvalidArgumentError(f"{name} must be finite")
    return x


def _check_tau(tau):
    if not (np.isfinite(tau) and tau > 0):
        raise InvalidArgumentError(f"temperature must be positive, got {tau!r}")


def softmax(logits, tau=1.0):
    """Tempered softmax along the last axis, ``exp(x/tau) / sum(exp(x/tau))``."""
    _check_tau(tau)
    x = _check_finite(logits, "logits") / tau
    x = x - np.max(x, axis=-1, keepdims=True)
    e = np.exp(x)
    return e / np.sum(e, axis=-1, keepdims=True)


def log_softmax(logits, tau=1.0):
    _check_tau(tau)
    x = _check_finite(logits, "logits") / tau
    x = x - np.max(x, axis=-1, keepdims=True)
    return x - np.log(np.sum(np.exp(x), axis=-1, keepdims=True))


def softmax_jacobian(pi):
    """Jacobian of the (untempered) softmax expressed through its output.

    Returns ``diag(pi) - pi pi^T`` with shape ``(..., n, n)``.
    """
    pi = np.asarray(pi, dtype=float)
    return pi[..., :, None] * np.eye(pi.shape[-1]) - pi[..., :, None] * pi[..., None, :]


def uniform_open(rng, size):
    """Uniform draws on the open interval (0, 1)."""
    u = _as_generator(rng).random(size)
    return np.where(u <= 0.0, _TINY, u)


def one_hot(idx, n):
    idx = np.asarray(idx)
    out = np.zeros(idx.shape + (n,))
    np.put_along_axis(out, idx[..., None], 1.0, axis=-1)
    return out


def sample_categories(pi, u):
    """Inverse-CDF category indices for probabilities ``pi`` (L, n) and uniforms ``u`` (B, L)."""
    pi = np.ascontiguousarray(pi, dtype=float)
    u = np.ascontiguousarray(u, dtype=float)
    return kernels.ACTIVE.inverse_cdf(pi, u)


def sample_one_hot(pi, rng):
    """Draw one category per row of ``pi`` using a single uniform each.

    ``pi`` may be a vector (returns an ``(n,)`` one-hot) or an ``(L, n)``
    matrix (returns ``(L, n)``).
    """
    pi = np.asarray(pi, dtype=float)
    squeeze = pi.ndim == 1
    pi2 = np.atleast_2d(pi)
    u = uniform_open(rng, (1, pi2.shape[0]))
    out = one_hot(sample_categories(pi2, u)[0], pi2.shape[-1])
    return out[0] if squeeze else out


def gumbel_noise(rng, size):
    return -np.log(-np.log(uniform_open(rng, size)))


def gumbel_argmax(logits, rng):
    """Gumbel-max sample.

    Returns ``(one_hot, perturbed)`` where ``perturbed = logits + G`` with
    i.i.d. standard Gumbel ``G``. Ties go to the lowest index.
    """
    theta = _check_finite(logits, "logits")
    perturbed = theta + gumbel_noise(rng, theta.shape)
    return one_hot(np.argmax(perturbed, axis=-1), theta.shape[-1]), perturbed


def conditional_gumbels(logits, k, rng):
    """Draw ``logits + G`` conditioned on its argmax being ``k``.

    Uses the truncated-Gumbel construction from i.i.d. Exp(1) variables: the
    winning coordinate is a Gumbel located at ``logsumexp(logits)`` and every
    other coordinate is a Gumbel truncated below it.
    """
    theta = _check_finite(logits, "logits")
    n = theta.shape[-1]
    k = np.asarray(k)
    if np.any((k < 0) | (k >= n)):
        raise InvalidArgumentError(f"category index out of range [0, {n})")
    exps = _as_generator(rng).standard_exponential(theta.shape)
    exps = np.where(exps <= 0.0, _TINY, exps)
    return kernels.conditional_gumbels_from_exponentials(theta, k, exps)
