"""Gradient estimators for ``d/dtheta E_{D ~ softmax(theta)}[f(D)]``.

``theta`` is an ``(L, n)`` logit matrix with independent rows. Every
estimator returns an ``(L, n)`` array. Straight-through style estimators use
``g_i = df/dD_i`` evaluated at the full joint sample, one softmax per row.

Three families live here:

* sampled estimators (REINFORCE, ST, STGS, GR-MC, ReinMax, averaged-baseline
  ST), built from a per-sample "rows" function plus a batch mean;
* closed-form expectations of the sampled estimators over ``D``, obtained by
  weighting the same per-sample rows with enumerated probabilities;
* oracles that evaluate the first- and second-order approximations of the
  exact gradient by their defining double sums. They never call the
  estimator code, so agreement between the two is a real check.
"""
import enum
import warnings
from dataclasses import dataclass
from typing import NamedTuple, Optional

import numpy as np

from catgrad import kernels
from catgrad.categorical import (
    RngStream,
    gumbel_noise,
    one_hot,
    sample_categories,
    softmax,
    uniform_open,
)
from catgrad.errors import InvalidArgumentError, NumericGuardError
from catgrad.objectives import (
    ENUMERATION_CAP,
    joint_one_hots,
    joint_outcomes,
    joint_probabilities,
)


class Kind(str, enum.Enum):
    EXACT = "exact"
    REINFORCE = "reinforce"
    ST = "st"
    STGS = "stgs"
    GR_MC = "gr_mc"
    REINMAX = "reinmax"
    FIRST_ORDER_ORACLE = "first_order_oracle"
    SECOND_ORDER_ORACLE = "second_order_oracle"
    SECOND_ORDER_WO_BASELINE_ORACLE = "second_order_wo_baseline_oracle"
    AVG_BASELINE_ST = "avg_baseline_st"

    @classmethod
    def parse(cls, name):
        if isinstance(name, cls):
            return name
        key = str(name).strip().lower().replace("-", "_")
        aliases = {"grmc": "gr_mc", "gr_mck": "gr_mc", "straight_through": "st"}
        try:
            return cls(aliases.get(key, key))
        except ValueError:
            choices = ", ".join(k.value for k in cls)
            raise InvalidArgumentError(f"unknown estimator {name!r}; choose from {choices}") from None


SAMPLED_KINDS = {Kind.REINFORCE, Kind.ST, Kind.STGS, Kind.GR_MC, Kind.REINMAX, Kind.AVG_BASELINE_ST}
EXPECTABLE_KINDS = {Kind.ST, Kind.REINMAX, Kind.REINFORCE, Kind.AVG_BASELINE_ST}

# Weights of the two softmax-Jacobian terms in ReinMax. Module-level so the
# verification suite can corrupt them for its negative control.
_REINMAX_WEIGHTS = (2.0, 0.5)


@dataclass(frozen=True)
class EstimatorConfig:
    kind: Kind = Kind.REINMAX
    tau: float = 1.0
    mc_samples: int = 1000
    phi: Optional[np.ndarray] = None
    reinforce_baseline: str = "none"

    def __post_init__(self):
        object.__setattr__(self, "kind", Kind.parse(self.kind))
        if not (np.isfinite(self.tau) and self.tau > 0):
            raise InvalidArgumentError(f"tau must be positive, got {self.tau!r}")
        if int(self.mc_samples) < 1:
            raise InvalidArgumentError("mc_samples must be >= 1")
        if self.reinforce_baseline not in ("none", "batch_mean"):
            raise InvalidArgumentError("reinforce_baseline must be 'none' or 'batch_mean'")
        if self.phi is not None:
            phi = np.asarray(self.phi, dtype=float)
            if np.any(phi < 0) or not np.allclose(phi.sum(axis=-1), 1.0, atol=1e-9):
                raise InvalidArgumentError("phi must lie on the probability simplex")
            object.__setattr__(self, "phi", phi)


@dataclass(frozen=True)
class BatchSpec:
    batch_size: int
    rng: RngStream

    def __post_init__(self):
        if int(self.batch_size) < 1:
            raise InvalidArgumentError("batch_size must be >= 1")


class Estimate(NamedTuple):
    grad: np.ndarray
    values: np.ndarray  # f(D) for every sample drawn, shape (B,)


def _batch_mean(rows):
    # Index-order summation so results do not depend on how the batch was produced.
    return np.add.reduce(rows, axis=0) / rows.shape[0]


def _full(a, shape):
    return np.ascontiguousarray(np.broadcast_to(a, shape), dtype=float)


# --------------------------------------------------------------------------
# per-sample rows


def st_rows(theta, D, g, tau=1.0):
    """``g_i (1/tau) (diag(pi_tau,i) - pi_tau,i pi_tau,i^T)`` per sample and row."""
    pi_tau = softmax(theta, tau)
    g = np.ascontiguousarray(g, dtype=float)
    return kernels.ACTIVE.softmax_jvp(g, _full(pi_tau, g.shape)) / tau


def reinmax_rows(theta, D, g, tau=1.0):
    """``g_i (2 J(pi_1) - 1/2 J(pi_0))`` with ``pi_1 = (D_i + softmax_tau(theta_i)) / 2``.

    ``J`` is the untempered softmax Jacobian: the stop-gradient
    re-parameterization softmax(sg(ln pi_1 - theta) + theta) has value pi_1 and
    the tau = 1 Jacobian evaluated there.
    """
    g = np.ascontiguousarray(g, dtype=float)
    shape = g.shape
    w_mid, w_st = _REINMAX_WEIGHTS
    return kernels.ACTIVE.reinmax_rows(
        g, _full(D, shape), _full(softmax(theta), shape), _full(softmax(theta, tau), shape),
        w_mid, w_st,
    )


def reinforce_rows(theta, D, values, baseline=0.0):
    """``(f(D) - b) (D_i - pi_i)``, the score-function term of each sample."""
    pi = softmax(theta)
    w = np.asarray(values, dtype=float) - baseline
    return w[:, None, None] * (D - pi)


def avg_baseline_st_rows(theta, D, g, tau=1.0, phi=None):
    """ST rows rescaled by ``phi_D / pi_D`` per variable."""
    pi = softmax(theta)
    n = pi.shape[-1]
    phi = np.full(n, 1.0 / n) if phi is None else np.asarray(phi, dtype=float)
    phi = np.broadcast_to(phi, pi.shape)
    pi_d = np.sum(D * pi, axis=-1)
    if np.any(pi_d < 1e-12):
        raise NumericGuardError(
            f"sampled category has probability {pi_d.min():.3g} < 1e-12; "
            "the phi_D / pi_D weight is unbounded"
        )
    scale = np.sum(D * phi, axis=-1) / pi_d
    return st_rows(theta, D, g, tau) * scale[..., None]


def stgs_rows(theta, perturbed, g, tau=1.0):
    """``g_i (1/tau) J(softmax_tau(theta_i + G_i))`` given ``perturbed = theta + G``."""
    x = np.asarray(perturbed, dtype=float) / tau
    x = x - np.max(x, axis=-1, keepdims=True)
    s = np.exp(x)
    s /= np.sum(s, axis=-1, keepdims=True)
    g = np.ascontiguousarray(g, dtype=float)
    return kernels.ACTIVE.softmax_jvp(g, np.ascontiguousarray(s)) / tau


# --------------------------------------------------------------------------
# sampling helpers


def _generator(rng):
    return rng.generator() if isinstance(rng, RngStream) else rng


def sample_batch(theta, batch_size, rng):
    """Draw ``batch_size`` joint samples from ``softmax(theta)`` by inverse CDF.

    Returns ``(idx, D)`` with shapes ``(B, L)`` and ``(B, L, n)``.
    """
    theta = np.asarray(theta, dtype=float)
    pi = softmax(theta)
    u = uniform_open(_generator(rng), (batch_size, theta.shape[0]))
    idx = sample_categories(pi, u)
    return idx, one_hot(idx, theta.shape[-1])


_GR_MC_CHUNK = 1 << 21  # max floats of exponential noise held at once


def _gr_mc_rows_sampled(theta, idx, g, K, tau, gen):
    B, L, n = g.shape
    per_elem = L * K * n
    chunk = max(1, _GR_MC_CHUNK // per_elem)
    out = np.empty((B, L, n))
    th = np.ascontiguousarray(theta, dtype=float)
    for start in range(0, B, chunk):
        stop = min(B, start + chunk)
        exps = gen.standard_exponential((stop - start, L, K, n))
        np.maximum(exps, np.nextafter(0.0, 1.0), out=exps)
        out[start:stop] = kernels.ACTIVE.gr_mc_rows(
            np.ascontiguousarray(g[start:stop]), th,
            np.ascontiguousarray(idx[start:stop], dtype=np.int64), exps, float(tau),
        )
    return out


def estimate(theta, obj, batch, cfg):
    """Run the estimator selected by ``cfg`` on one batch.

    Returns an :class:`Estimate` holding the averaged gradient and ``f`` at
    every sampled ``D``. Deterministic kinds (exact, oracles) still draw a
    batch so that callers always get sampled objective values.
    """
    theta = np.asarray(theta, dtype=float)
    kind = cfg.kind
    gen = _generator(batch.rng)
    B = int(batch.batch_size)

    if kind is Kind.STGS:
        G = gumbel_noise(gen, (B,) + theta.shape)
        perturbed = theta + G
        D = one_hot(np.argmax(perturbed, axis=-1), theta.shape[-1])
        values, g = obj.value_and_grad(D)
        return Estimate(_batch_mean(stgs_rows(theta, perturbed, g, cfg.tau)), values)

    idx, D = sample_batch(theta, B, gen)
    values, g = obj.value_and_grad(D)

    if kind is Kind.ST:
        rows = st_rows(theta, D, g, cfg.tau)
    elif kind is Kind.REINMAX:
        if cfg.tau < 1:
            warnings.warn("ReinMax is intended for tau >= 1", RuntimeWarning, stacklevel=2)
        rows = reinmax_rows(theta, D, g, cfg.tau)
    elif kind is Kind.REINFORCE:
        b = float(np.mean(values)) if cfg.reinforce_baseline == "batch_mean" else 0.0
        rows = reinforce_rows(theta, D, values, b)
    elif kind is Kind.AVG_BASELINE_ST:
        rows = avg_baseline_st_rows(theta, D, g, cfg.tau, cfg.phi)
    elif kind is Kind.GR_MC:
        rows = _gr_mc_rows_sampled(theta, idx, g, int(cfg.mc_samples), cfg.tau, gen)
    elif kind is Kind.EXACT:
        return Estimate(exact_gradient(theta, obj), values)
    elif kind is Kind.FIRST_ORDER_ORACLE:
        return Estimate(first_order_oracle(theta, obj), values)
    elif kind is Kind.SECOND_ORDER_ORACLE:
        return Estimate(second_order_oracle(theta, obj), values)
    elif kind is Kind.SECOND_ORDER_WO_BASELINE_ORACLE:
        return Estimate(second_order_wo_baseline_oracle(theta, obj), values)
    else:  # pragma: no cover
        raise InvalidArgumentError(f"unsupported estimator {kind}")
    return Estimate(_batch_mean(rows), values)


def _sampled(kind, theta, obj, batch, cfg):
    if cfg is None:
        cfg = EstimatorConfig(kind)
    elif cfg.kind is not kind:
        cfg = EstimatorConfig(kind, cfg.tau, cfg.mc_samples, cfg.phi, cfg.reinforce_baseline)
    return estimate(theta, obj, batch, cfg).grad


def reinforce_estimate(theta, obj, batch, cfg=None):
    return _sampled(Kind.REINFORCE, theta, obj, batch, cfg)


def st_estimate(theta, obj, batch, cfg=None):
    return _sampled(Kind.ST, theta, obj, batch, cfg)


def stgs_estimate(theta, obj, batch, cfg=None):
    return _sampled(Kind.STGS, theta, obj, batch, cfg)


def gr_mc_estimate(theta, obj, batch, cfg=None):
    return _sampled(Kind.GR_MC, theta, obj, batch, cfg)


def reinmax_estimate(theta, obj, batch, cfg=None):
    return _sampled(Kind.REINMAX, theta, obj, batch, cfg)


def avg_baseline_st_estimate(theta, obj, batch, cfg=None):
    return _sampled(Kind.AVG_BASELINE_ST, theta, obj, batch, cfg)


# --------------------------------------------------------------------------
# enumeration: exact gradient and closed-form expectations


def _enumerate(theta, obj, cap):
    theta = np.asarray(theta, dtype=float)
    L, n = theta.shape
    idx = joint_outcomes(L, n, cap)
    D = joint_one_hots(L, n, cap)
    pi = softmax(theta)
    probs = joint_probabilities(pi, idx)
    values, grads = obj.value_and_grad(D)
    return pi, D, probs, values, grads


def expected_loss(theta, obj, cap=ENUMERATION_CAP):
    _, _, probs, values, _ = _enumerate(theta, obj, cap)
    return float(probs @ values)


def exact_gradient(theta, obj, cap=ENUMERATION_CAP):
    """``sum_D f(D) dP(D)/dtheta`` over every joint outcome.

    Uses ``dP(D)/dtheta_i = P(D) (D_i - pi_i)`` for the factorized softmax.
    """
    pi, D, probs, values, _ = _enumerate(theta, obj, cap)
    return np.einsum("b,bij->ij", probs * values, D - pi)


def expected_estimate(kind, theta, obj, tau=1.0, phi=None, cap=ENUMERATION_CAP):
    """``E_D[estimator]`` computed by enumerating ``D``; no Monte-Carlo error.

    REINFORCE is taken without a baseline. STGS and GR-MC are rejected since
    their expectation also runs over continuous Gumbel noise.
    """
    kind = Kind.parse(kind)
    if kind not in EXPECTABLE_KINDS:
        raise InvalidArgumentError(f"no closed-form expectation for {kind.value}")
    _, D, probs, values, grads = _enumerate(theta, obj, cap)
    theta = np.asarray(theta, dtype=float)
    if kind is Kind.ST:
        rows = st_rows(theta, D, grads, tau)
    elif kind is Kind.REINMAX:
        rows = reinmax_rows(theta, D, grads, tau)
    elif kind is Kind.REINFORCE:
        rows = reinforce_rows(theta, D, values)
    else:
        rows = avg_baseline_st_rows(theta, D, grads, tau, phi)
    return np.einsum("b,bij->ij", probs, rows)


# --------------------------------------------------------------------------
# oracles
#
# For one variable with probabilities pi and per-category gradients gs[j] =
# df/dD at D = I_j, the approximations are double sums over (i, j) of a
# scalar coefficient times d pi_i / d theta = J[i, :]. With several variables
# each row is handled with the other variables held at a fixed outcome, and
# the result is averaged over those outcomes with their probabilities.


def _conditional_slices(theta, obj, cap):
    """Yield ``(i, pi_i, w, gs)`` per variable.

    ``gs[r, j]`` is ``df/dD_i`` at ``D_i = I_j`` with the other variables at
    their ``r``-th joint outcome, whose probability is ``w[r]``.
    """
    theta = np.asarray(theta, dtype=float)
    L, n = theta.shape
    pi = softmax(theta)
    D = joint_one_hots(L, n, cap)
    _, grads = obj.value_and_grad(D)
    grads = grads.reshape((n,) * L + (L, n))
    rest_idx = joint_outcomes(L - 1, n, cap) if L > 1 else np.zeros((1, 0), dtype=int)
    for i in range(L):
        gi = np.moveaxis(grads[..., i, :], i, 0).reshape(n, -1, n)
        gs = np.transpose(gi, (1, 0, 2))  # (R, j, coordinate)
        pi_rest = np.delete(pi, i, axis=0)
        w = joint_probabilities(pi_rest, rest_idx) if L > 1 else np.ones(1)
        yield i, pi[i], w, gs


def _oracle(theta, obj, coef_fn, cap):
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    for i, p, w, gs in _conditional_slices(theta, obj, cap):
        J = np.diag(p) - np.outer(p, p)  # row a is d pi_a / d theta
        coef = coef_fn(i, p, gs)  # (R, a, j): coefficient multiplying d pi_a / d theta
        out[i] = np.einsum("r,raj,ak->k", w, coef, J)
    return out


def _diag(gs):
    # gs[r, j, j]: the j-th partial at I_j, i.e. grad(I_j) . I_j
    return np.einsum("rjj->rj", gs)


def first_order_oracle(theta, obj, cap=ENUMERATION_CAP):
    """``sum_a sum_j pi_j f'(I_j).(I_a - I_j) dpi_a/dtheta`` (forward-Euler form)."""
    def coef(i, p, gs):
        # f'(I_j).(I_a - I_j) = gs[j, a] - gs[j, j]
        diff = np.transpose(gs, (0, 2, 1)) - _diag(gs)[:, None, :]
        return diff * p[None, None, :]
    return _oracle(theta, obj, coef, cap)


def first_order_avg_baseline_oracle(theta, obj, phi=None, cap=ENUMERATION_CAP):
    """First-order double sum with the expansion points weighted by ``phi``."""
    theta = np.asarray(theta, dtype=float)
    n = theta.shape[-1]
    phi = np.full(n, 1.0 / n) if phi is None else np.asarray(phi, dtype=float)
    phis = np.broadcast_to(phi, theta.shape)

    def coef(i, p, gs):
        ph = phis[i]
        diff = np.transpose(gs, (0, 2, 1)) - _diag(gs)[:, None, :]
        return diff * ph[None, None, :]
    return _oracle(theta, obj, coef, cap)


def second_order_oracle(theta, obj, cap=ENUMERATION_CAP):
    """``sum_a sum_j pi_j/2 (f'(I_j) + f'(I_a)).(I_a - I_j) dpi_a/dtheta`` (Heun form)."""
    def coef(i, p, gs):
        gt = np.transpose(gs, (0, 2, 1))  # gt[r, a, j] = gs[r, j, a]
        dg = _diag(gs)
        # f'(I_j).(I_a - I_j) + f'(I_a).(I_a - I_j)
        diff = (gt - dg[:, None, :]) + (dg[:, :, None] - gs)
        return 0.5 * diff * p[None, None, :]
    return _oracle(theta, obj, coef, cap)


def second_order_wo_baseline_oracle(theta, obj, cap=ENUMERATION_CAP):
    """Coordinate ``k``: ``pi_k sum_a pi_a 1/2 (f'(I_a) + f'(I_k)).(I_k - I_a)``.

    This variant expands ``f(I_k) - f(I_a)`` directly, with no baseline
    subtracted from the exact gradient first.
    """
    theta = np.asarray(theta, dtype=float)
    out = np.zeros_like(theta)
    for i, p, w, gs in _conditional_slices(theta, obj, cap):
        dg = _diag(gs)  # (R, a)
        # (f'(I_a) + f'(I_k)).(I_k - I_a) = gs[a,k] - gs[a,a] + gs[k,k] - gs[k,a]
        pair = gs - dg[:, :, None] + dg[:, None, :] - np.transpose(gs, (0, 2, 1))
        per_k = 0.5 * np.einsum("a,rak->rk", p, pair) * p[None, :]
        out[i] = w @ per_k
    return out


def cosine_similarity(a, b):
    a = np.asarray(a, dtype=float)
    b = np.asarray(b, dtype=float)
    if a.shape != b.shape:
        raise InvalidArgumentError(f"shape mismatch {a.shape} vs {b.shape}")
    na = np.linalg.norm(a)
    nb = np.linalg.norm(b)
    if na < 1e-15 or nb < 1e-15:
        return 0.0
    return float(np.clip(np.dot(a.ravel(), b.ravel()) / (na * nb), -1.0, 1.0))
