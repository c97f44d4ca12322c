"""Reflected solver: the GBSDE pushed up by a nondecreasing K to stay above zeta."""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import InvalidInputError
from .gbsde import DEFAULT_TOL, backward_pass, path_identity_defect
from .lattice import LatticeModel, MartingaleM, conditional_expectation
from .processes import AdaptedProcess, Driver, Generator, _check_shape

ACTIVITY_TOL = 1e-12
CONTACT_TOL = 1e-9


@dataclass(frozen=True, eq=False)
class RgbsdeSolution:
    y: AdaptedProcess
    z: AdaptedProcess
    k_inc: AdaptedProcess  # dK_k at each node; zero at maturity
    residual: float


def solve_reflected(model: LatticeModel, m: MartingaleM, driver: Driver, gen: Generator,
                    zeta: AdaptedProcess, tol: float = DEFAULT_TOL) -> RgbsdeSolution:
    """Per node: y = max(zeta_k, E[Y_{k+1}] + g(k, y) dA_k), terminal zeta_N."""
    if tol <= 0:
        raise InvalidInputError("tol must be positive")
    _check_shape(model, zeta, "zeta")
    ys, zs, dks = backward_pass(model, m, driver, gen, zeta.terminal, obstacle=zeta, tol=tol)
    y, z, dk = AdaptedProcess(tuple(ys)), AdaptedProcess(tuple(zs)), AdaptedProcess(tuple(dks))
    return RgbsdeSolution(y, z, dk, path_identity_defect(model, m, driver, gen, y, z, dk))


def extract_k_cumulative(model: LatticeModel, sol: RgbsdeSolution) -> AdaptedProcess:
    """K_k = sum of dK_j over j < k along the path.

    On a recombining lattice the two parents of a shared node must agree,
    otherwise K is path-dependent and needs the full binary tree.
    """
    vals = [np.zeros(1)]
    for k in range(model.depth):
        carried = vals[k] + sol.k_inc[k]
        nxt = np.full(model.count(k + 1), np.nan)
        nxt[model.down_child(k)] = carried
        up = model.up_child(k)
        seen = ~np.isnan(nxt[up])
        if np.any(np.abs(nxt[up][seen] - carried[seen]) > 1e-12):
            raise InvalidInputError("cumulative K is path-dependent; use a full binary lattice")
        nxt[up] = carried
        vals.append(nxt)
    return AdaptedProcess(tuple(vals))


def skorokhod_violations(sol: RgbsdeSolution, zeta: AdaptedProcess,
                         activity: float = ACTIVITY_TOL, contact: float = CONTACT_TOL) -> int:
    """Nodes where K increases while Y sits strictly above the obstacle."""
    bad = 0
    for y, dk, z in zip(sol.y.values, sol.k_inc.values, zeta.values):
        bad += int(np.count_nonzero((dk > activity) & (np.abs(y - z) > contact)))
    return bad


def obstacle_violations(sol: RgbsdeSolution, zeta: AdaptedProcess, tol: float = 0.0) -> int:
    return sum(int(np.count_nonzero(y < z - tol)) for y, z in zip(sol.y.values, zeta.values))


def classical_snell(model: LatticeModel, reward: AdaptedProcess) -> AdaptedProcess:
    """V_N = reward_N, V_k = max(reward_k, E[V_{k+1}])."""
    vals = [None] * (model.depth + 1)
    vals[model.depth] = reward.terminal.copy()
    for k in range(model.depth - 1, -1, -1):
        vals[k] = np.maximum(reward[k], conditional_expectation(model, vals[k + 1], k))
    return AdaptedProcess(tuple(vals))
