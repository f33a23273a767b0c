"""Adam and RAdam as pure state transitions.

``optim_step`` never mutates its inputs; replaying a gradient sequence from
the same initial state reproduces the parameter trajectory bit for bit.
"""
import enum
from dataclasses import dataclass

import numpy as np

from catgrad.errors import InvalidArgumentError


class Algorithm(str, enum.Enum):
    ADAM = "adam"
    RADAM = "radam"


@dataclass(frozen=True)
class OptimConfig:
    algorithm: Algorithm = Algorithm.ADAM
    learning_rate: float = 1e-3
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-8

    def __post_init__(self):
        try:
            alg = Algorithm(str(getattr(self.algorithm, "value", self.algorithm)).lower())
        except ValueError:
            raise InvalidArgumentError(f"unknown optimizer {self.algorithm!r}") from None
        object.__setattr__(self, "algorithm", alg)
        if not self.learning_rate > 0:
            raise InvalidArgumentError("learning_rate must be positive")
        for name in ("beta1", "beta2"):
            if not 0.0 <= getattr(self, name) < 1.0:
                raise InvalidArgumentError(f"{name} must lie in [0, 1)")
        if not self.epsilon > 0:
            raise InvalidArgumentError("epsilon must be positive")


@dataclass(frozen=True)
class OptimState:
    step_count: int
    first_moment: np.ndarray
    second_moment: np.ndarray

    @classmethod
    def zeros(cls, shape):
        return cls(0, np.zeros(shape), np.zeros(shape))


def optim_step(state, theta, grad, cfg):
    """One Adam/RAdam update; returns ``(new_state, new_theta)``."""
    theta = np.asarray(theta, dtype=float)
    grad = np.asarray(grad, dtype=float)
    if grad.shape != theta.shape or state.first_moment.shape != theta.shape:
        raise InvalidArgumentError(
            f"shape mismatch: theta {theta.shape}, grad {grad.shape}, "
            f"state {state.first_moment.shape}"
        )
    b1, b2, eps, lr = cfg.beta1, cfg.beta2, cfg.epsilon, cfg.learning_rate
    t = state.step_count + 1
    m = b1 * state.first_moment + (1.0 - b1) * grad
    v = b2 * state.second_moment + (1.0 - b2) * grad * grad
    m_hat = m / (1.0 - b1 ** t)
    v_hat = v / (1.0 - b2 ** t)

    if cfg.algorithm is Algorithm.ADAM:
        update = m_hat / (np.sqrt(v_hat) + eps)
    else:
        rho_inf = 2.0 / (1.0 - b2) - 1.0
        rho_t = rho_inf - 2.0 * t * b2 ** t / (1.0 - b2 ** t)
        if rho_t > 4.0:
            r = np.sqrt((rho_t - 4.0) * (rho_t - 2.0) * rho_inf
                        / ((rho_inf - 4.0) * (rho_inf - 2.0) * rho_t))
            update = r * m_hat / (np.sqrt(v_hat) + eps)
        else:
            # variance estimate not yet trustworthy: momentum-only step
            update = m_hat
    return OptimState(t, m, v), theta - lr * update
