"""Penalization ladders, their limit oracles and exhaustive stopping-rule checks."""
from __future__ import annotations

from dataclasses import dataclass, field
from enum import Enum
from typing import Sequence

import numpy as np

from .errors import EnumerationTooLargeError, InvalidInputError
from .gbsde import solve_backward
from .lattice import LatticeModel, MartingaleM, NodeId, conditional_expectation, martingale_of
from .processes import (AdaptedProcess, Driver, StoppingRule, _check_shape, penalty_down_generator,
                        penalty_up_generator, realized_stop, terminal_values)
from .rgbsde import classical_snell, solve_reflected

DEFAULT_N_VALUES = tuple(2 ** i for i in range(15))
MONOTONE_TOL = 1e-12
ENUMERATION_GUARD = 24


class TerminalMode(str, Enum):
    ZETA_T = "zeta_t"
    ZETA_OR_ETA_T = "zeta_or_eta_t"


class LadderKind(str, Enum):
    GBSDE_UP = "gbsde_up"
    REFLECTED_UP = "reflected_up"
    REFLECTED_DOWN = "reflected_down"


@dataclass(frozen=True, eq=False)
class PenalizationReport:
    kind: LadderKind
    n_values: tuple[float, ...]
    y_by_n: tuple[AdaptedProcess, ...]
    oracle: AdaptedProcess
    sup_errors: tuple[float, ...]
    monotone_steps: tuple[bool, ...]  # level i against level i-1; the first entry is True
    terminal_mode: TerminalMode | None = None
    errors_by_mode: dict = field(default_factory=dict)

    @property
    def monotone_ok(self) -> bool:
        return all(self.monotone_steps)

    @property
    def root_values(self) -> tuple[float, ...]:
        return tuple(float(y[0][0]) for y in self.y_by_n)

    @property
    def oracle_root(self) -> float:
        return float(self.oracle[0][0])

    def doubling_ratios(self, last: int | None = None) -> list[float]:
        errs = self.sup_errors if last is None else self.sup_errors[-last:]
        return [a / b for a, b in zip(errs[:-1], errs[1:]) if b > 0]


@dataclass(frozen=True, eq=False)
class GameSpec:
    """Lower process zeta, barrier eta, and the admissible set from the driver.

    ``xi`` overrides the terminal slice of zeta when given.
    """

    zeta: AdaptedProcess
    eta: AdaptedProcess
    driver: Driver
    xi: np.ndarray | None = None

    @property
    def lower(self) -> AdaptedProcess:
        if self.xi is None:
            return self.zeta
        return self.zeta.replace_step(self.zeta.depth, self.xi)

    def check(self, model: LatticeModel) -> "GameSpec":
        _check_shape(model, self.zeta, "zeta")
        _check_shape(model, self.eta, "eta")
        lower = self.lower
        for k in range(model.depth + 1):
            bad = self.driver.in_sbar(k) & (lower[k] > self.eta[k])
            if np.any(bad):
                i = int(np.flatnonzero(bad)[0])
                raise InvalidInputError(
                    f"zeta > eta on admissible node ({k},{i}): "
                    f"{float(lower[k][i])!r} > {float(self.eta[k][i])!r}")
        return self


# ---------------------------------------------------------------------------
# backward-induction oracles


def constrained_snell(model: LatticeModel, driver: Driver, xi, eta: AdaptedProcess) -> AdaptedProcess:
    """Value of stopping on admissible nodes only: reward eta before T, xi at T."""
    _check_shape(model, eta, "eta")
    vals = [None] * (model.depth + 1)
    vals[model.depth] = terminal_values(model, xi).copy()
    for k in range(model.depth - 1, -1, -1):
        cont = conditional_expectation(model, vals[k + 1], k)
        vals[k] = np.where(driver.in_sbar(k), np.maximum(eta[k], cont), cont)
    return AdaptedProcess(tuple(vals))


def gamma_reward(model: LatticeModel, driver: Driver, zeta: AdaptedProcess,
                 eta: AdaptedProcess) -> AdaptedProcess:
    """zeta_T at T; zeta v eta on admissible nodes, zeta elsewhere, before T."""
    vals = []
    for k in range(model.depth):
        vals.append(np.where(driver.in_sbar(k), np.maximum(zeta[k], eta[k]), zeta[k]))
    vals.append(zeta.terminal.copy())
    return AdaptedProcess(tuple(vals))


def snell_of_gamma(model: LatticeModel, driver: Driver, zeta: AdaptedProcess,
                   eta: AdaptedProcess) -> AdaptedProcess:
    _check_shape(model, zeta, "zeta")
    _check_shape(model, eta, "eta")
    return classical_snell(model, gamma_reward(model, driver, zeta, eta))


def dynkin_value(model: LatticeModel, driver: Driver, spec: GameSpec,
                 terminal_mode: TerminalMode = TerminalMode.ZETA_T) -> AdaptedProcess:
    """Median recursion; valid because zeta <= eta on admissible nodes."""
    spec.check(model)
    zeta, eta = spec.lower, spec.eta
    terminal_mode = TerminalMode(terminal_mode)
    vals = [None] * (model.depth + 1)
    if terminal_mode is TerminalMode.ZETA_T:
        vals[model.depth] = zeta.terminal.copy()
    else:
        vals[model.depth] = np.maximum(zeta.terminal, eta.terminal)
    for k in range(model.depth - 1, -1, -1):
        cont = conditional_expectation(model, vals[k + 1], k)
        free = np.maximum(zeta[k], cont)
        vals[k] = np.where(driver.in_sbar(k), np.minimum(free, eta[k]), free)
    return AdaptedProcess(tuple(vals))


# ---------------------------------------------------------------------------
# ladders


def _check_n_values(n_values):
    n_values = tuple(float(n) for n in n_values)
    if not n_values:
        raise InvalidInputError("n_values must not be empty")
    if n_values[0] < 0 or any(b <= a for a, b in zip(n_values, n_values[1:])):
        raise InvalidInputError("n_values must be nonnegative and strictly increasing")
    return n_values


def _monotone_steps(levels, increasing: bool):
    steps = [True]
    for prev, cur in zip(levels, levels[1:]):
        diff = (cur - prev) if increasing else (prev - cur)
        steps.append(diff.min_value() >= -MONOTONE_TOL)
    return tuple(steps)


def ladder_gbsde(model: LatticeModel, m: MartingaleM, driver: Driver, xi, eta: AdaptedProcess,
                 n_values: Sequence[float] = DEFAULT_N_VALUES) -> PenalizationReport:
    n_values = _check_n_values(n_values)
    oracle = constrained_snell(model, driver, xi, eta)
    levels = tuple(solve_backward(model, m, driver, penalty_up_generator(eta, n), xi).y
                   for n in n_values)
    errs = tuple((y - oracle).sup_norm() for y in levels)
    return PenalizationReport(LadderKind.GBSDE_UP, n_values, levels, oracle, errs,
                              _monotone_steps(levels, increasing=True))


def ladder_reflected_up(model: LatticeModel, m: MartingaleM, driver: Driver, zeta: AdaptedProcess,
                        eta: AdaptedProcess,
                        n_values: Sequence[float] = DEFAULT_N_VALUES) -> PenalizationReport:
    n_values = _check_n_values(n_values)
    oracle = snell_of_gamma(model, driver, zeta, eta)
    levels = tuple(solve_reflected(model, m, driver, penalty_up_generator(eta, n), zeta).y
                   for n in n_values)
    errs = tuple((y - oracle).sup_norm() for y in levels)
    return PenalizationReport(LadderKind.REFLECTED_UP, n_values, levels, oracle, errs,
                              _monotone_steps(levels, increasing=True))


def ladder_reflected_down(model: LatticeModel, m: MartingaleM, driver: Driver, spec: GameSpec,
                          n_values: Sequence[float] = DEFAULT_N_VALUES) -> PenalizationReport:
    """Decreasing ladder; the oracle's terminal mode is whichever one the
    last level is closer to, and both distances are kept."""
    n_values = _check_n_values(n_values)
    spec.check(model)
    zeta, eta = spec.lower, spec.eta
    levels = tuple(solve_reflected(model, m, driver, penalty_down_generator(eta, n), zeta).y
                   for n in n_values)
    by_mode = {}
    for mode in TerminalMode:
        oracle = dynkin_value(model, driver, spec, mode)
        by_mode[mode] = (oracle, tuple((y - oracle).sup_norm() for y in levels))
    best = min(TerminalMode, key=lambda md: (by_mode[md][1][-1], md is not TerminalMode.ZETA_T))
    oracle, errs = by_mode[best]
    return PenalizationReport(LadderKind.REFLECTED_DOWN, n_values, levels, oracle, errs,
                              _monotone_steps(levels, increasing=False), terminal_mode=best,
                              errors_by_mode={md: v[1] for md, v in by_mode.items()})


# ---------------------------------------------------------------------------
# exhaustive enumeration


def _guard(model: LatticeModel):
    fb = model.full_binary()
    if fb.non_terminal_count > ENUMERATION_GUARD:
        raise EnumerationTooLargeError(
            f"enumeration needs {fb.non_terminal_count} non-terminal nodes "
            f"(guard {ENUMERATION_GUARD}); depth {model.depth} is too deep")
    return fb


def _stop_sets(fb: LatticeModel, allowed, step: int, index: int) -> list[tuple]:
    if step == fb.depth:
        return [()]
    up = _stop_sets(fb, allowed, step + 1, int(fb.up_child(step)[index]))
    down = _stop_sets(fb, allowed, step + 1, int(fb.down_child(step)[index]))
    out = [((step, index),)] if allowed(step, index) else []
    out.extend(a + b for a in up for b in down)
    return out


def enumerate_stopping_rules(model: LatticeModel, constrained: bool, driver: Driver | None = None,
                             start: NodeId = NodeId(0, 0)) -> list[StoppingRule]:
    """Every first-hit rule on the full binary expansion, from ``start`` on.

    Rules are expressed on the full binary tree because adapted stopping
    decisions may depend on the path even when the data recombine.
    """
    fb = _guard(model)
    if constrained:
        if driver is None:
            raise InvalidInputError("constrained enumeration needs the driver")
        sbar = [_expand_mask(model, k, driver.in_sbar(k)) for k in range(model.depth + 1)]
        allowed = lambda k, i: bool(sbar[k][i])
    else:
        allowed = lambda k, i: True
    fb.check_node(start)
    rules = []
    for nodes in _stop_sets(fb, allowed, start.step, start.index):
        stop = [np.zeros(fb.count(k), dtype=bool) for k in range(fb.depth + 1)]
        stop[-1][:] = True
        for k, i in nodes:
            stop[k][i] = True
        rules.append(StoppingRule(tuple(stop), constrained))
    return rules


def _expand_mask(model: LatticeModel, step: int, mask: np.ndarray) -> np.ndarray:
    return mask[model.full_binary().levels(step)] if model.count(step) != 1 << step else mask


def _paths(fb: LatticeModel, start: NodeId):
    paths, probs = zip(*fb.paths_from(start))
    return np.array(paths, dtype=int), np.array(probs)


def _stop_steps(rules, paths, start_step):
    return np.array([[realized_stop(r, p, start_step) for p in paths] for r in rules], dtype=int)


def _on_paths(proc: AdaptedProcess, paths: np.ndarray, start_step: int) -> np.ndarray:
    """Matrix [path, step] of process values, steps before start left as nan."""
    out = np.full(paths.shape, np.nan)
    for k in range(start_step, paths.shape[1]):
        out[:, k] = proc[k][paths[:, k]]
    return out


def brute_force_optimal_stop(model: LatticeModel, driver: Driver, reward: AdaptedProcess,
                             constrained: bool) -> AdaptedProcess:
    """max over all (sub-)rules of the expected stopped reward, at every node."""
    fb = _guard(model)
    _check_shape(model, reward, "reward")
    rew = model.expand(reward)
    values = [np.empty(fb.count(k)) for k in range(fb.depth + 1)]
    for k in range(fb.depth + 1):
        for i in range(fb.count(k)):
            start = NodeId(k, i)
            rules = enumerate_stopping_rules(model, constrained, driver, start)
            paths, probs = _paths(fb, start)
            stops = _stop_steps(rules, paths, k)
            vals = _on_paths(rew, paths, k)
            payoff = np.take_along_axis(np.broadcast_to(vals, (len(rules),) + vals.shape),
                                        stops[..., None], axis=2)[..., 0]
            values[k][i] = float(np.max(payoff @ probs))
    return _project(model, values)


def brute_force_dynkin(model: LatticeModel, driver: Driver, spec: GameSpec,
                       terminal_mode: TerminalMode = TerminalMode.ZETA_T):
    """Inf-sup and sup-inf of E[Theta(sigma, tau)] by exhausting rule pairs.

    sigma (maximiser) is unconstrained, tau (minimiser) stops on admissible
    nodes only. On simultaneous stopping the minimiser's (zeta v eta)_tau
    is paid, except at maturity in ``ZETA_T`` mode where zeta_T is paid.
    """
    fb = _guard(model)
    spec.check(model)
    terminal_mode = TerminalMode(terminal_mode)
    zeta = model.expand(spec.lower)
    upper = model.expand(spec.lower.maximum(spec.eta))
    n = fb.depth
    infsup = [np.empty(fb.count(k)) for k in range(n + 1)]
    supinf = [np.empty(fb.count(k)) for k in range(n + 1)]
    for k in range(n + 1):
        for i in range(fb.count(k)):
            start = NodeId(k, i)
            paths, probs = _paths(fb, start)
            s_sig = _stop_steps(enumerate_stopping_rules(model, False, driver, start), paths, k)
            s_tau = _stop_steps(enumerate_stopping_rules(model, True, driver, start), paths, k)
            zv = _on_paths(zeta, paths, k)
            uv = _on_paths(upper, paths, k)
            pidx = np.arange(paths.shape[0])
            z_sig = zv[pidx[None, :], s_sig]            # (R_sigma, P)
            u_tau = uv[pidx[None, :], s_tau]            # (R_tau, P)
            tau_first = s_tau[:, None, :] <= s_sig[None, :, :]
            pay = np.where(tau_first, u_tau[:, None, :], z_sig[None, :, :])
            if terminal_mode is TerminalMode.ZETA_T:
                both_end = (s_tau[:, None, :] == n) & (s_sig[None, :, :] == n)
                pay = np.where(both_end, zv[:, n][None, None, :], pay)
            exp = pay @ probs                            # (R_tau, R_sigma)
            infsup[k][i] = float(np.min(np.max(exp, axis=1)))
            supinf[k][i] = float(np.max(np.min(exp, axis=0)))
    return _project(model, infsup), _project(model, supinf)


def _project(model: LatticeModel, fb_values) -> AdaptedProcess:
    return AdaptedProcess(tuple(np.asarray(fb_values[k])[model.representative(k)]
                                for k in range(model.depth + 1)))


def conditional_martingale(model: LatticeModel, xi) -> AdaptedProcess:
    return martingale_of(model, terminal_values(model, xi))
