"""Solvers for Y_k = Y_{k+1} - Z_k dM_k + g(k, Y_k) dA_k with Y_N = xi.

The node equation is implicit (backward Euler): at every node the solver
finds y with y = E[Y_{k+1} | node] + g(k, node, y) dA_k.
"""
from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError, NonConvergenceError, SchemeInfeasibleError
from .lattice import (LatticeModel, MartingaleM, conditional_expectation, martingale_of,
                      representation_coefficient)
from .processes import (AdaptedProcess, Driver, Generator, _check_shape, node_solve_penalty_down,
                        node_solve_penalty_up, terminal_values)

DEFAULT_TOL = 1e-12
MAX_NODE_ITER = 10_000


@dataclass(frozen=True, eq=False)
class GbsdeSolution:
    y: AdaptedProcess
    z: AdaptedProcess  # the terminal slice is zero and carries no meaning
    residual: float
    iterations: int = 0
    contraction_ratio: float = math.nan


def _gate(gen: Generator, driver: Driver, step: int):
    if gen.exact:
        return
    factor = gen.lipschitz * driver.increments[step]
    if np.any(factor >= 1.0):
        i = int(np.argmax(factor))
        raise SchemeInfeasibleError(
            f"node ({step},{i}): L*dA = {float(factor[i])!r} >= 1 and generator "
            f"{gen.name!r} has no exact node solver", step=step, index=i, factor=float(factor[i]))


def solve_node_step(gen: Generator, driver: Driver, step: int, c: np.ndarray,
                    obstacle: np.ndarray | None = None, tol: float = DEFAULT_TOL,
                    damping: float = 1.0) -> np.ndarray:
    """Solve y = [max(obstacle,] c + g(step, node, y) dA) at every node of a step."""
    _gate(gen, driver, step)
    da = driver.increments[step]
    nodes = np.arange(c.shape[0])
    if gen.exact:
        y = np.asarray(gen.node_solver(step, nodes, c, da), dtype=float)
        return y if obstacle is None else np.maximum(obstacle, y)

    def node_map(y):
        out = c + gen(step, nodes, y) * da
        return out if obstacle is None else np.maximum(obstacle, out)

    y = c.copy() if obstacle is None else np.maximum(obstacle, c)
    for _ in range(MAX_NODE_ITER):
        fy = node_map(y)
        if np.max(np.abs(fy - y), initial=0.0) <= tol:
            return fy
        y = (1.0 - damping) * y + damping * fy
    raise NonConvergenceError(f"node fixed point at step {step} did not reach tol={tol}")


def backward_pass(model: LatticeModel, m: MartingaleM, driver: Driver, gen: Generator,
                  terminal: np.ndarray, obstacle: AdaptedProcess | None = None,
                  tol: float = DEFAULT_TOL):
    """Shared implicit induction; returns (Y, Z, dK) as lists of per-step arrays."""
    n = model.depth
    ys = [None] * (n + 1)
    zs = [np.zeros(model.count(k)) for k in range(n + 1)]
    dks = [np.zeros(model.count(k)) for k in range(n + 1)]
    ys[n] = np.asarray(terminal, dtype=float)
    for k in range(n - 1, -1, -1):
        c = conditional_expectation(model, ys[k + 1], k)
        ob = None if obstacle is None else obstacle[k]
        y = solve_node_step(gen, driver, k, c, ob, tol)
        ys[k] = y
        zs[k] = representation_coefficient(model, m, ys[k + 1], k)
        if obstacle is not None:
            free = c + gen(k, np.arange(y.shape[0]), y) * driver.increments[k]
            # K only moves where Y sits on the obstacle; elsewhere it is exactly zero
            dks[k] = np.where(y <= ob, np.maximum(y - free, 0.0), 0.0)
    return ys, zs, dks


def path_identity_defect(model: LatticeModel, m: MartingaleM, driver: Driver, gen: Generator,
                         y: AdaptedProcess, z: AdaptedProcess, dk: AdaptedProcess | None = None) -> float:
    """Largest |Y_k - (Y_{k+1} - Z_k dM_k + g(k, Y_k) dA_k + dK_k)| over both branches."""
    worst = 0.0
    for k in range(model.depth):
        nodes = np.arange(model.count(k))
        drift = gen(k, nodes, y[k]) * driver.increments[k]
        if dk is not None:
            drift = drift + dk[k]
        for child, dm in ((model.up_child(k), m.dm_up[k]), (model.down_child(k), m.dm_down[k])):
            rhs = y[k + 1][child] - z[k] * dm + drift
            worst = max(worst, float(np.max(np.abs(y[k] - rhs))))
    return worst


def solve_backward(model: LatticeModel, m: MartingaleM, driver: Driver, gen: Generator, xi,
                   tol: float = DEFAULT_TOL) -> GbsdeSolution:
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    ys, zs, _ = backward_pass(model, m, driver, gen, terminal_values(model, xi), tol=tol)
    y, z = AdaptedProcess(tuple(ys)), AdaptedProcess(tuple(zs))
    return GbsdeSolution(y, z, path_identity_defect(model, m, driver, gen, y, z))


def picard_map(model: LatticeModel, driver: Driver, gen: Generator, terminal: np.ndarray,
               w: AdaptedProcess) -> AdaptedProcess:
    """Phi(w)_k = E[xi + sum_{j>=k} g(j, w_j) dA_j | F_k]."""
    n = model.depth
    out = [None] * (n + 1)
    out[n] = np.asarray(terminal, dtype=float)
    for k in range(n - 1, -1, -1):
        nodes = np.arange(model.count(k))
        out[k] = conditional_expectation(model, out[k + 1], k) + gen(k, nodes, w[k]) * driver.increments[k]
    return AdaptedProcess(tuple(out))


def weighted_sup(driver: Driver, x: AdaptedProcess, beta: float) -> float:
    """sup over nodes of e^{beta A / 2} |x|."""
    return max(float(np.max(np.exp(0.5 * beta * a) * np.abs(v))) for a, v in zip(driver.a.values, x.values))


def solve_picard_global(model: LatticeModel, m: MartingaleM, driver: Driver, gen: Generator, xi,
                        beta: float | None = None, max_iter: int = 500,
                        tol: float = 1e-12) -> GbsdeSolution:
    """Fixed point of the global map Phi in the beta-weighted sup norm."""
    if beta is None:
        beta = 2.0 * gen.lipschitz + 2.0
    terminal = terminal_values(model, xi)
    w = martingale_of(model, terminal)
    prev_diff, ratio = math.nan, math.nan
    for it in range(1, max_iter + 1):
        nxt = picard_map(model, driver, gen, terminal, w)
        diff = weighted_sup(driver, nxt - w, beta)
        if prev_diff > 0:
            ratio = diff / prev_diff
        w, prev_diff = nxt, diff
        if diff < tol:
            zs = [representation_coefficient(model, m, w, k) for k in range(model.depth)]
            z = AdaptedProcess(tuple(zs) + (np.zeros(model.count(model.depth)),))
            return GbsdeSolution(w, z, path_identity_defect(model, m, driver, gen, w, z),
                                 iterations=it, contraction_ratio=ratio)
        if not math.isfinite(diff):
            break
    raise NonConvergenceError(
        f"Picard iteration did not reach tol={tol} in {max_iter} steps "
        f"(last contraction ratio {ratio!r})", last_ratio=ratio)


def picard_contraction(model: LatticeModel, driver: Driver, gen: Generator, xi,
                       beta: float, w: AdaptedProcess, dw: AdaptedProcess) -> float:
    """Measured ratio |Phi(w + dw) - Phi(w)|_beta / |dw|_beta."""
    terminal = terminal_values(model, xi)
    num = weighted_sup(driver, picard_map(model, driver, gen, terminal, w + dw)
                       - picard_map(model, driver, gen, terminal, w), beta)
    return num / weighted_sup(driver, dw, beta)


def picard_contraction_bound(model: LatticeModel, driver: Driver, lipschitz: float,
                             beta: float) -> float:
    """Lipschitz bound of Phi in the weighted sup norm.

    rho_k = L dA_k + e^{-beta dA_k / 2} E[rho_{k+1} | node], rho_N = 0.
    """
    rho = np.zeros(model.count(model.depth))
    worst = 0.0
    for k in range(model.depth - 1, -1, -1):
        da = driver.increments[k]
        rho = lipschitz * da + np.exp(-0.5 * beta * da) * conditional_expectation(model, rho, k)
        worst = max(worst, float(np.max(rho)))
    return worst


def solve_linear_closed_form(model: LatticeModel, m: MartingaleM | None, driver: Driver, n: float,
                             eta: AdaptedProcess, xi, quadrature: str = "exponential") -> AdaptedProcess:
    """Solution of the linear equation with generator n (eta - y).

    ``quadrature="exponential"`` integrates exactly with eta frozen at the
    left grid value (kernel e^{-n dA}); ``"implicit"`` uses the backward-Euler
    kernel 1/(1 + n dA), which is the exact discrete solution of the same
    implicit scheme as :func:`solve_backward`.
    """
    if n < 0:
        raise InvalidInputError("penalty level must be nonnegative")
    _check_shape(model, eta, "eta")
    vals = [None] * (model.depth + 1)
    vals[model.depth] = terminal_values(model, xi).copy()
    for k in range(model.depth - 1, -1, -1):
        x = n * driver.increments[k]
        if quadrature == "exponential":
            keep = np.exp(-x)
            mass = -np.expm1(-x)
        elif quadrature == "implicit":
            keep = 1.0 / (1.0 + x)
            mass = x / (1.0 + x)
        else:
            raise InvalidInputError(f"unknown quadrature {quadrature!r}")
        vals[k] = keep * conditional_expectation(model, vals[k + 1], k) + mass * eta[k]
    return AdaptedProcess(tuple(vals))


__all__ = [
    "GbsdeSolution", "solve_backward", "solve_picard_global", "solve_linear_closed_form",
    "node_solve_penalty_up", "node_solve_penalty_down", "picard_map", "picard_contraction",
    "picard_contraction_bound", "path_identity_defect", "weighted_sup",
]
