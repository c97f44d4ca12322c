"""Randomised property checks: comparison, stability, Dirac limit, identities.

Every check draws its instances from ``numpy.random.default_rng`` seeded by
(seed, check, trial), so a report is a pure function of the config.
Failures are counted, never raised.
"""
from __future__ import annotations

import hashlib
import math
from dataclasses import dataclass, field

import numpy as np

from .errors import InvalidInputError
from .gbsde import solve_backward
from .lattice import LatticeModel, NodeId, build_lattice, conditional_expectation, standard_walk_martingale
from .processes import (AdaptedProcess, Driver, StoppingRule, clamped_linear_generator,
                        driver_from_increments, exp_integral_weights, exp_weight,
                        penalty_down_generator, penalty_up_generator, realized_stop,
                        sine_generator)
from .rgbsde import obstacle_violations, skorokhod_violations, solve_reflected

CHECKS = ("comparison", "monotonicity", "stability", "dirac", "identities")
_CHECK_IDS = {name: i for i, name in enumerate(CHECKS)}


@dataclass
class Tolerances:
    comparison: float = 1e-12
    monotonicity: float = 1e-12
    stability_slack: float = 1.05
    dirac: float = 1e-6
    dirac_threshold: float = 20.0
    identity: float = 1e-10
    activity: float = 1e-12
    contact: float = 1e-9


@dataclass
class PropertyConfig:
    trials: int = 50
    trials_by_check: dict = field(default_factory=dict)
    min_depth: int = 2
    max_depth: int = 8
    da_range: tuple = (0.0, 0.3)
    lipschitz_range: tuple = (0.0, 2.0)
    stability_max_da: float = 0.02
    beta: float | None = None
    alpha: float = 1.0
    seed: int = 42
    up_prob: float = 0.5
    tolerances: Tolerances = field(default_factory=Tolerances)

    def __post_init__(self):
        if isinstance(self.tolerances, dict):
            self.tolerances = Tolerances(**self.tolerances)
        self.da_range = tuple(self.da_range)
        self.lipschitz_range = tuple(self.lipschitz_range)

    @property
    def effective_beta(self) -> float:
        return 2.0 * self.lipschitz_range[1] + 2.0 if self.beta is None else float(self.beta)

    def trials_for(self, check: str) -> int:
        return int(self.trials_by_check.get(check, self.trials))

    def validate(self) -> "PropertyConfig":
        for name in CHECKS:
            if self.trials_for(name) < 1:
                raise InvalidInputError(f"trials for {name!r} must be >= 1")
        unknown = set(self.trials_by_check) - set(CHECKS)
        if unknown:
            raise InvalidInputError(f"unknown checks in trials_by_check: {sorted(unknown)}")
        if not 1 <= self.min_depth <= self.max_depth:
            raise InvalidInputError("need 1 <= min_depth <= max_depth")
        if self.max_depth > 12:
            raise InvalidInputError("max_depth above 12 is not supported by the full binary instances")
        lo, hi = self.da_range
        if not 0 <= lo <= hi:
            raise InvalidInputError("da_range must satisfy 0 <= lo <= hi")
        llo, lhi = self.lipschitz_range
        if not 0 <= llo <= lhi:
            raise InvalidInputError("lipschitz_range must satisfy 0 <= lo <= hi")
        if self.alpha <= 0:
            raise InvalidInputError("alpha must be positive")
        if not self.effective_beta > 2 * lhi + 1 / self.alpha:
            raise InvalidInputError(
                f"beta = {self.effective_beta!r} must exceed 2 L + 1/alpha = {2 * lhi + 1 / self.alpha!r}")
        if not 0 < self.stability_max_da:
            raise InvalidInputError("stability_max_da must be positive")
        if not 0 < self.up_prob < 1:
            raise InvalidInputError("up_prob must lie in (0, 1)")
        return self


@dataclass
class CheckResult:
    name: str
    trials: int
    failures: int = 0
    skipped: int = 0
    worst_violation: float = -math.inf
    worst_trial: int = -1
    worst_digest: str = ""
    seed: int = 0

    def record(self, trial: int, violation: float, ok: bool, digest: str):
        if not ok:
            self.failures += 1
        if violation > self.worst_violation:
            self.worst_violation = float(violation)
            self.worst_trial = trial
            self.worst_digest = digest

    def merge(self, other: "CheckResult") -> "CheckResult":
        """Associative reduction of two partial results for the same check."""
        out = CheckResult(self.name, self.trials + other.trials, self.failures + other.failures,
                          self.skipped + other.skipped, seed=self.seed)
        best = max((self, other), key=lambda r: (r.worst_violation, -r.worst_trial))
        out.worst_violation, out.worst_trial, out.worst_digest = (
            best.worst_violation, best.worst_trial, best.worst_digest)
        return out


@dataclass
class PropertyReport:
    checks: list

    @property
    def failures(self) -> int:
        return sum(c.failures for c in self.checks)

    @property
    def ok(self) -> bool:
        return self.failures == 0

    def __getitem__(self, name: str) -> CheckResult:
        for c in self.checks:
            if c.name == name:
                return c
        raise KeyError(name)


# ---------------------------------------------------------------------------
# instance generation


def _rng(cfg: PropertyConfig, check: str, trial: int) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, _CHECK_IDS[check], trial])


def _digest(*arrays) -> str:
    h = hashlib.sha256()
    for a in arrays:
        if isinstance(a, AdaptedProcess):
            for v in a.values:
                h.update(np.ascontiguousarray(v).tobytes())
        else:
            h.update(np.ascontiguousarray(np.asarray(a, dtype=float)).tobytes())
    return h.hexdigest()[:12]


def random_model(rng, cfg: PropertyConfig, max_depth: int | None = None) -> LatticeModel:
    depth = int(rng.integers(cfg.min_depth, (max_depth or cfg.max_depth) + 1))
    return build_lattice(depth, cfg.up_prob, "full_binary")


def random_driver(rng, model: LatticeModel, lo: float, hi: float, zero_prob: float = 0.2) -> Driver:
    incs = []
    for k in range(model.depth):
        inc = rng.uniform(lo, hi, size=model.count(k))
        inc[rng.random(model.count(k)) < zero_prob] = 0.0
        incs.append(inc)
    return driver_from_increments(model, incs)


def random_process(rng, model: LatticeModel, lo: float = -1.0, hi: float = 1.0) -> AdaptedProcess:
    return AdaptedProcess(tuple(rng.uniform(lo, hi, size=model.count(k)) for k in range(model.depth + 1)))


def random_nonneg(rng, model: LatticeModel, hi: float = 0.5) -> AdaptedProcess:
    """Nonnegative offsets, exactly zero at about a third of the nodes."""
    vals = []
    for k in range(model.depth + 1):
        v = rng.uniform(0.0, hi, size=model.count(k))
        v[rng.random(model.count(k)) < 1 / 3] = 0.0
        vals.append(v)
    return AdaptedProcess(tuple(vals))


def random_constrained_rule(rng, model: LatticeModel, driver: Driver, stop_prob: float = 0.3) -> StoppingRule:
    stop = []
    for k in range(model.depth + 1):
        s = (rng.random(model.count(k)) < stop_prob) & driver.in_sbar(k)
        stop.append(s)
    stop[-1][:] = True
    return StoppingRule(tuple(stop), constrained=True).validate(driver)


# ---------------------------------------------------------------------------
# checks


def check_comparison(cfg: PropertyConfig) -> CheckResult:
    """Y >= Y~ for g >= h, g nonincreasing, xi >= xi~ (plain and reflected)."""
    cfg.validate()
    tol = cfg.tolerances.comparison
    res = CheckResult("comparison", cfg.trials_for("comparison"), seed=cfg.seed)
    for t in range(res.trials):
        rng = _rng(cfg, "comparison", t)
        model = random_model(rng, cfg)
        m = standard_walk_martingale(model)
        driver = random_driver(rng, model, *cfg.da_range)
        a = random_process(rng, model)
        b = random_process(rng, model, *cfg.lipschitz_range)
        g = clamped_linear_generator(a, b, -2.0, 2.0)
        h = clamped_linear_generator(a - random_nonneg(rng, model), b, -2.0, 2.0)
        xi = random_process(rng, model)
        xi_lo = xi - random_nonneg(rng, model)
        zeta = random_process(rng, model)
        zeta_lo = zeta - random_nonneg(rng, model)
        plain = (solve_backward(model, m, driver, h, xi_lo).y - solve_backward(model, m, driver, g, xi).y)
        refl = (solve_reflected(model, m, driver, h, zeta_lo).y - solve_reflected(model, m, driver, g, zeta).y)
        violation = max(plain.max_value(), refl.max_value())
        res.record(t, violation, violation <= tol, _digest(driver.a, a, b, xi, zeta))
    return res


def check_monotonicity(cfg: PropertyConfig) -> CheckResult:
    """Up-penalised solutions increase in n, down-penalised ones decrease."""
    cfg.validate()
    tol = cfg.tolerances.monotonicity
    res = CheckResult("monotonicity", cfg.trials_for("monotonicity"), seed=cfg.seed)
    for t in range(res.trials):
        rng = _rng(cfg, "monotonicity", t)
        model = random_model(rng, cfg)
        m = standard_walk_martingale(model)
        driver = random_driver(rng, model, *cfg.da_range)
        xi = random_process(rng, model)
        zeta = random_process(rng, model)
        eta = zeta + random_nonneg(rng, model, 1.0)
        ns = sorted(set(rng.integers(0, 4096, size=4).tolist()))
        worst = -math.inf
        prev = None
        for n in ns:
            cur = (solve_backward(model, m, driver, penalty_up_generator(eta, n), xi).y,
                   solve_reflected(model, m, driver, penalty_up_generator(eta, n), zeta).y,
                   solve_reflected(model, m, driver, penalty_down_generator(eta, n), zeta).y)
            if prev is not None:
                worst = max(worst, (prev[0] - cur[0]).max_value(), (prev[1] - cur[1]).max_value(),
                            (cur[2] - prev[2]).max_value())
            prev = cur
        if worst == -math.inf:
            res.skipped += 1
            continue
        res.record(t, worst, worst <= tol, _digest(driver.a, xi, zeta, eta))
    return res


def stability_sides(model, driver, y1, y2, xi1, xi2, g1, g2, beta, alpha):
    """(e_k |Y^1 - Y^2|^2, E[e_N |xi^1 - xi^2|^2 + alpha sum e_j |g^1 - g^2|^2(Y^2_j) dA_j | F_k])."""
    e = exp_weight(driver, beta)
    lhs = e * (y1 - y2) * (y1 - y2)
    rhs = [None] * (model.depth + 1)
    rhs[-1] = e.terminal * (xi1 - xi2) ** 2
    for k in range(model.depth - 1, -1, -1):
        nodes = np.arange(model.count(k))
        gh = g1(k, nodes, y2[k]) - g2(k, nodes, y2[k])
        rhs[k] = conditional_expectation(model, rhs[k + 1], k) + alpha * e[k] * gh ** 2 * driver.increments[k]
    return lhs, AdaptedProcess(tuple(rhs))


def check_stability(cfg: PropertyConfig) -> CheckResult:
    """Weighted stability estimate with multiplicative slack on small increments."""
    cfg.validate()
    slack = cfg.tolerances.stability_slack
    beta, alpha = cfg.effective_beta, cfg.alpha
    lmax = cfg.lipschitz_range[1]
    res = CheckResult("stability", cfg.trials_for("stability"), seed=cfg.seed)
    for t in range(res.trials):
        rng = _rng(cfg, "stability", t)
        model = random_model(rng, cfg)
        m = standard_walk_martingale(model)
        driver = random_driver(rng, model, 0.0, cfg.stability_max_da)
        slope1 = random_process(rng, model, -lmax, lmax)
        slope2 = random_process(rng, model, -lmax, lmax)
        a1 = random_process(rng, model)
        a2 = a1 + random_process(rng, model, -0.5, 0.5)
        g1 = clamped_linear_generator(a1, slope1, -3.0, 3.0)
        g2 = clamped_linear_generator(a2, slope2, -3.0, 3.0)
        xi1 = random_process(rng, model).terminal
        xi2 = xi1 + rng.uniform(-0.5, 0.5, size=xi1.shape)
        y1 = solve_backward(model, m, driver, g1, xi1).y
        y2 = solve_backward(model, m, driver, g2, xi2).y
        lhs, rhs = stability_sides(model, driver, y1, y2, xi1, xi2, g1, g2, beta, alpha)
        violation = (lhs - slack * rhs).max_value()
        res.record(t, violation, violation <= 0.0, _digest(driver.a, a1, a2, slope1, slope2, xi1, xi2))
    return res


def dirac_functional(model: LatticeModel, driver: Driver, rule: StoppingRule, xi: np.ndarray,
                     eta: AdaptedProcess, n: float) -> tuple[float, float]:
    """(D_n, its limit) at the root, by expectation over every path."""
    d_n = limit = 0.0
    for path, prob in model.paths_from(NodeId(0, 0)):
        nu = realized_stop(rule, path)
        weights, terminal = exp_integral_weights(model, driver, n, nu, path)
        val = xi[path[-1]] * terminal + sum(eta[k][path[k]] * w for k, w in weights)
        lim = xi[path[-1]] if nu == model.depth else eta[nu][path[nu]]
        d_n += prob * val
        limit += prob * lim
    return d_n, limit


def check_dirac(cfg: PropertyConfig) -> CheckResult:
    """|D_n - limit| <= tol once n * min dA >= threshold, and the error stays
    under range * exp(-n min dA) along a doubling ladder."""
    cfg.validate()
    tol, thresh = cfg.tolerances.dirac, cfg.tolerances.dirac_threshold
    res = CheckResult("dirac", cfg.trials_for("dirac"), seed=cfg.seed)
    lo, hi = max(cfg.da_range[0], 0.05), max(cfg.da_range[1], 0.1)
    for t in range(res.trials):
        rng = _rng(cfg, "dirac", t)
        model = random_model(rng, cfg, max_depth=min(cfg.max_depth, 6))
        driver = random_driver(rng, model, lo, hi)
        d_min = driver.min_positive_increment
        if not math.isfinite(d_min):
            res.skipped += 1
            continue
        rule = random_constrained_rule(rng, model, driver)
        eta = random_process(rng, model, 0.0, 1.0)
        xi = rng.uniform(0.0, 1.0, size=model.count(model.depth))
        spread = max(eta.max_value(), xi.max()) - min(eta.min_value(), xi.min())
        worst = -math.inf
        n = 1.0
        while n * d_min < 4 * thresh:
            d_n, limit = dirac_functional(model, driver, rule, xi, eta, n)
            err = abs(d_n - limit)
            bound = spread * math.exp(-n * d_min) + 1e-14
            worst = max(worst, err - bound)
            if n * d_min >= thresh:
                worst = max(worst, err - tol)
            n *= 2.0
        res.record(t, worst, worst <= 0.0, _digest(driver.a, eta, xi))
    return res


def check_identities(cfg: PropertyConfig) -> CheckResult:
    """Path identities, the obstacle constraint and flat-off over random solves."""
    cfg.validate()
    tols = cfg.tolerances
    res = CheckResult("identities", cfg.trials_for("identities"), seed=cfg.seed)
    for t in range(res.trials):
        rng = _rng(cfg, "identities", t)
        model = random_model(rng, cfg)
        m = standard_walk_martingale(model)
        driver = random_driver(rng, model, *cfg.da_range)
        eta = random_process(rng, model)
        kind = t % 4
        if kind == 0:
            gen = clamped_linear_generator(random_process(rng, model),
                                           random_process(rng, model, *cfg.lipschitz_range), -2.0, 2.0)
        elif kind == 1:
            gen = penalty_up_generator(eta, float(rng.integers(1, 1 << 14)))
        elif kind == 2:
            gen = penalty_down_generator(eta, float(rng.integers(1, 1 << 14)))
        else:
            amp = float(rng.uniform(*cfg.lipschitz_range))
            if amp * driver.max_increment >= 1.0:
                res.skipped += 1
                continue
            gen = sine_generator(random_process(rng, model), amp)
        xi = random_process(rng, model)
        zeta = random_process(rng, model)
        plain = solve_backward(model, m, driver, gen, xi)
        refl = solve_reflected(model, m, driver, gen, zeta)
        flat = skorokhod_violations(refl, zeta, tols.activity, tols.contact)
        below = obstacle_violations(refl, zeta)
        neg_k = int(sum(np.count_nonzero(v < 0) for v in refl.k_inc.values))
        violation = max(plain.residual, refl.residual) - tols.identity
        ok = violation <= 0 and flat == 0 and below == 0 and neg_k == 0
        if flat or below or neg_k:
            violation = max(violation, float(flat + below + neg_k))
        res.record(t, violation, ok, _digest(driver.a, eta, xi, zeta))
    return res


CHECK_FUNCS = {
    "comparison": check_comparison,
    "monotonicity": check_monotonicity,
    "stability": check_stability,
    "dirac": check_dirac,
    "identities": check_identities,
}


def run_checks(cfg: PropertyConfig, names=CHECKS) -> PropertyReport:
    cfg.validate()
    return PropertyReport([CHECK_FUNCS[name](cfg) for name in names])
