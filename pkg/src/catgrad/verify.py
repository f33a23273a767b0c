"""Seeded identity and accuracy checks, run by ``catgrad verify``.

Each check compares two independently computed quantities on seeded random
instances and reports the worst residual together with the instance that
produced it, so a failure can be replayed from the report alone.
"""
import contextlib
import math
from dataclasses import asdict, dataclass, field
from typing import List, Optional

import numpy as np

from catgrad import estimators as est
from catgrad.categorical import softmax, softmax_jacobian
from catgrad.estimators import (
    expected_estimate,
    exact_gradient,
    first_order_avg_baseline_oracle,
    first_order_oracle,
    second_order_oracle,
    second_order_wo_baseline_oracle,
    st_rows,
    reinmax_rows,
    stgs_rows,
)
from catgrad.numerics import (
    Method,
    ScalarPath,
    convergence_order,
    finite_diff_grad,
    heun_increment,
)
from catgrad.objectives import CubicObjective, QuadraticOracleObjective, joint_one_hots

IDENTITY_TOL = 1e-10


@dataclass
class CheckResult:
    check: str
    passed: bool
    max_residual: float
    tolerance: float
    instances: int
    detail: str = ""
    worst_instance: Optional[dict] = None


@dataclass
class VerifyReport:
    seed: int
    results: List[CheckResult] = field(default_factory=list)

    @property
    def passed(self):
        return all(r.passed for r in self.results)

    def to_text(self):
        lines = []
        for r in self.results:
            status = "PASS" if r.passed else "FAIL"
            line = (f"{status} {r.check} max_residual={r.max_residual:.3e} "
                    f"tol={r.tolerance:.0e} instances={r.instances}")
            if r.detail:
                line += f" {r.detail}"
            if not r.passed and r.worst_instance is not None:
                inst = " ".join(f"{k}={v}" for k, v in r.worst_instance.items())
                line += f" [replay: {inst}]"
            lines.append(line)
        n_fail = sum(not r.passed for r in self.results)
        lines.append(f"{'OK' if n_fail == 0 else 'FAILED'}: {len(self.results) - n_fail}/"
                     f"{len(self.results)} checks passed (seed={self.seed})")
        return "\n".join(lines) + "\n"

    def to_records(self):
        return [asdict(r) for r in self.results]


class _Worst:
    def __init__(self):
        self.value = 0.0
        self.instance = None

    def update(self, residual, instance):
        if residual > self.value or self.instance is None:
            self.value = float(residual)
            self.instance = instance


def cubic_instances(seed, count=200, n_range=(2, 8), L=1, theta_scale=3.0):
    """Random ``(theta, f)`` pairs with ``f`` a random cubic of the relaxed coordinates."""
    for k in range(count):
        rng = np.random.default_rng([seed, k])
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        theta = rng.uniform(-theta_scale, theta_scale, (L, n))
        obj = CubicObjective.random(rng, L, n)
        yield {"seed": seed, "instance": k, "L": L, "n": n}, theta, obj, rng


def quadratic_instances(seed, count=100, n_range=(2, 8), L=1):
    for k in range(count):
        rng = np.random.default_rng([seed, 10_000 + k])
        n = int(rng.integers(n_range[0], n_range[1] + 1))
        theta = rng.uniform(-3.0, 3.0, (L, n))
        obj_seed = int(rng.integers(2 ** 31))
        yield ({"seed": seed, "instance": k, "L": L, "n": n, "objective_seed": obj_seed},
               theta, QuadraticOracleObjective.random(obj_seed, L, n))


def _identity_check(name, seed, count, lhs, rhs, tol=IDENTITY_TOL):
    worst = _Worst()
    for inst, theta, obj, rng in cubic_instances(seed, count):
        residual = np.max(np.abs(lhs(theta, obj, rng) - rhs(theta, obj, rng)))
        worst.update(residual, inst)
    return CheckResult(name, worst.value <= tol, worst.value, tol, count,
                       worst_instance=worst.instance)


def check_st_first_order(seed, count=200):
    return _identity_check(
        "st_expectation_equals_first_order", seed, count,
        lambda th, f, r: expected_estimate("st", th, f),
        lambda th, f, r: first_order_oracle(th, f))


def check_reinmax_second_order(seed, count=200):
    return _identity_check(
        "reinmax_expectation_equals_second_order", seed, count,
        lambda th, f, r: expected_estimate("reinmax", th, f),
        lambda th, f, r: second_order_oracle(th, f))


def check_second_order_without_baseline(seed, count=200):
    return _identity_check(
        "second_order_baseline_free_form", seed, count,
        lambda th, f, r: second_order_wo_baseline_oracle(th, f),
        lambda th, f, r: second_order_oracle(th, f))


def check_avg_baseline_st(seed, count=200):
    def phi(th, rng):
        return np.random.default_rng([int(rng.integers(2 ** 31)), th.shape[-1]]).dirichlet(
            np.ones(th.shape[-1]))

    cache = {}

    def lhs(th, f, rng):
        cache["phi"] = phi(th, rng)
        return expected_estimate("avg_baseline_st", th, f, phi=cache["phi"])

    return _identity_check(
        "avg_baseline_st_equals_weighted_first_order", seed, count,
        lhs, lambda th, f, r: first_order_avg_baseline_oracle(th, f, cache["phi"]))


def check_reinforce_unbiased(seed, count=200):
    return _identity_check(
        "reinforce_expectation_equals_exact", seed, count,
        lambda th, f, r: expected_estimate("reinforce", th, f),
        lambda th, f, r: exact_gradient(th, f), tol=1e-12)


def check_exact_gradient_fd(seed, count=50):
    """Enumerated gradient against central differences of the enumerated loss."""
    worst = _Worst()
    for inst, theta, obj, rng in cubic_instances(seed, count):
        fd = finite_diff_grad(lambda t: est.expected_loss(t, obj), theta)
        ex = exact_gradient(theta, obj)
        worst.update(np.max(np.abs(fd - ex)) / max(1.0, np.max(np.abs(ex))), inst)
    return CheckResult("exact_gradient_matches_finite_differences", worst.value <= 1e-6,
                       worst.value, 1e-6, count, worst_instance=worst.instance)


def check_hand_anchor():
    T = np.zeros((2, 2, 2))
    T[0, 0, 0] = 6.0  # f(x) = x_1^3
    obj = CubicObjective(1, 2, T=T)
    theta = np.array([[math.log(3.0), 0.0]])
    got = {
        "exact": exact_gradient(theta, obj)[0, 0],
        "st": expected_estimate("st", theta, obj)[0, 0],
        "reinmax": expected_estimate("reinmax", theta, obj)[0, 0],
    }
    want = {"exact": 0.1875, "st": 0.421875, "reinmax": 0.28125}
    residual = max(abs(got[k] - want[k]) for k in want)
    detail = " ".join(f"{k}={got[k]:.12g}" for k in want)
    return CheckResult("hand_enumeration_anchor", residual <= 1e-12, residual, 1e-12, 1, detail,
                       {"theta": "(ln 3, 0)", "f": "x1^3"})


def check_quadratic_exactness(seed, count=100):
    worst = _Worst()
    gaps = 0
    for inst, theta, obj in quadratic_instances(seed, count):
        ex = exact_gradient(theta, obj)
        worst.update(np.max(np.abs(expected_estimate("reinmax", theta, obj) - ex)), inst)
        if np.max(np.abs(expected_estimate("st", theta, obj) - ex)) > 1e-6:
            gaps += 1
    ok = worst.value <= 1e-9
    return [
        CheckResult("reinmax_exact_on_quadratics", ok, worst.value, 1e-9, count,
                    worst_instance=worst.instance),
        CheckResult("st_biased_on_quadratics", gaps >= 0.9 * count, 1.0 - gaps / count, 0.1, count,
                    f"st_gap_fraction={gaps / count:.2f}"),
    ]


def check_linear_exactness(seed, count=100):
    worst = _Worst()
    for k in range(count):
        rng = np.random.default_rng([seed, 20_000 + k])
        n = int(rng.integers(2, 9))
        theta = rng.uniform(-3.0, 3.0, (1, n))
        obj = CubicObjective.random(rng, 1, n, degree=1)
        worst.update(np.max(np.abs(expected_estimate("st", theta, obj) - exact_gradient(theta, obj))),
                     {"seed": seed, "instance": k, "n": n})
    return CheckResult("st_exact_on_linear", worst.value <= 1e-10, worst.value, 1e-10, count,
                       worst_instance=worst.instance)


def check_tangent_rows(seed, count=50):
    worst = _Worst()
    for inst, theta, obj, rng in cubic_instances(seed, count):
        D = joint_one_hots(*theta.shape)
        _, g = obj.value_and_grad(D)
        mats = [st_rows(theta, D, g), reinmax_rows(theta, D, g),
                first_order_oracle(theta, obj)[None], second_order_oracle(theta, obj)[None],
                second_order_wo_baseline_oracle(theta, obj)[None]]
        worst.update(max(np.max(np.abs(m.sum(axis=-1))) for m in mats), inst)
    return CheckResult("rows_sum_to_zero", worst.value <= 1e-9, worst.value, 1e-9, count,
                       worst_instance=worst.instance)


def check_stgs_finite_differences(seed, count=100, rel_tol=1e-5):
    """STGS against central differences of the surrogate ``g . softmax_tau(theta + G)``."""
    worst = _Worst()
    for k in range(count):
        rng = np.random.default_rng([seed, 30_000 + k])
        L = int(rng.integers(1, 4))
        n = int(rng.integers(2, 7))
        tau = float(rng.choice([0.5, 1.0, 2.0]))
        theta = rng.uniform(-2.0, 2.0, (L, n))
        G = -np.log(-np.log(rng.uniform(1e-12, 1.0, (L, n))))
        obj = CubicObjective.random(rng, L, n)
        D = np.zeros((L, n))
        D[np.arange(L), np.argmax(theta + G, axis=-1)] = 1.0
        _, g = obj.value_and_grad(D)
        got = stgs_rows(theta, (theta + G)[None], g[None], tau)[0]
        fd = finite_diff_grad(lambda t: float(np.sum(g * softmax(t + G, tau))), theta)
        scale = max(np.max(np.abs(fd)), 1e-12)
        worst.update(np.max(np.abs(got - fd)) / scale,
                     {"seed": seed, "instance": k, "L": L, "n": n, "tau": tau})
    return CheckResult("stgs_matches_surrogate_finite_differences", worst.value <= rel_tol,
                       worst.value, rel_tol, count, worst_instance=worst.instance)


def check_softmax_jacobian(seed, count=50):
    worst = _Worst()
    for k in range(count):
        rng = np.random.default_rng([seed, 40_000 + k])
        theta = rng.uniform(-5.0, 5.0, int(rng.integers(2, 9)))
        J = softmax_jacobian(softmax(theta))
        fd = np.stack([finite_diff_grad(lambda t, a=a: softmax(t)[a], theta)
                       for a in range(theta.size)])
        worst.update(np.max(np.abs(J - fd)), {"seed": seed, "instance": k, "n": theta.size})
    return CheckResult("softmax_jacobian_matches_finite_differences", worst.value <= 1e-6,
                       worst.value, 1e-6, count, worst_instance=worst.instance)


SCALAR_PATHS = {
    "exp": (math.exp, math.exp),
    "sin": (math.sin, math.cos),
    "inv_quad": (lambda x: 1.0 / (1.0 + x * x), lambda x: -2.0 * x / (1.0 + x * x) ** 2),
}


def check_orders():
    out = []
    for method, target in ((Method.EULER, 1.0), (Method.HEUN, 2.0)):
        worst = 0.0
        orders = {}
        for name, (g, gp) in SCALAR_PATHS.items():
            rep = convergence_order(method, ScalarPath(g, gp, 0.0, 1.0), halvings=5)
            orders[name] = rep.observed_order
            worst = max(worst, abs(rep.observed_order - target) if rep.defined else math.inf)
        detail = " ".join(f"{k}={v:.4f}" for k, v in orders.items())
        out.append(CheckResult(f"{method.value}_global_order", worst <= 0.2, worst, 0.2,
                               len(SCALAR_PATHS), detail))
    worst = 0.0
    rng = np.random.default_rng(0)
    for _ in range(100):
        a, b, c = rng.uniform(-10, 10, 3)
        path = ScalarPath(lambda x: a * x * x + b * x + c, lambda x: 2 * a * x + b, 0.0, 1.0)
        worst = max(worst, abs(heun_increment(path) - path.increment()))
    out.append(CheckResult("heun_exact_on_quadratics", worst < 1e-10, worst, 1e-10, 100))
    return out


@contextlib.contextmanager
def corrupted_reinmax(delta=0.05):
    """Perturb the ReinMax mixing weight; used as a negative control."""
    saved = est._REINMAX_WEIGHTS
    est._REINMAX_WEIGHTS = (saved[0] + delta, saved[1])
    try:
        yield
    finally:
        est._REINMAX_WEIGHTS = saved


def run_verify(seed=0, instances=200, corrupt_reinmax=False):
    """Run every check; ``report.passed`` is False if any check fails."""
    report = VerifyReport(seed)
    ctx = corrupted_reinmax() if corrupt_reinmax else contextlib.nullcontext()
    with ctx:
        report.results.extend([
            check_st_first_order(seed, instances),
            check_reinmax_second_order(seed, instances),
            check_second_order_without_baseline(seed, instances),
            check_avg_baseline_st(seed, instances),
            check_reinforce_unbiased(seed, instances),
            check_exact_gradient_fd(seed),
            check_hand_anchor(),
            *check_quadratic_exactness(seed),
            check_linear_exactness(seed),
            check_tangent_rows(seed),
            check_stgs_finite_differences(seed),
            check_softmax_jacobian(seed),
            *check_orders(),
        ])
    return report
