"""Binomial lattice filtration, the driving martingale and conditional expectations.

Node indexing: node ``i`` at step ``k``. On the recombining tree ``i`` is the
number of up-moves so far; on the full binary tree ``i`` is the path code
with bit 1 for an up-move (most recent move in the lowest bit). In both
schemes the up successor has the larger index.
"""
from __future__ import annotations

import math
from dataclasses import dataclass
from enum import Enum
from functools import cached_property
from typing import Iterator, NamedTuple

import numpy as np

from .errors import InvalidInputError, RepresentationError
from .processes import AdaptedProcess, _check_shape


class Structure(str, Enum):
    RECOMBINING = "recombining"
    FULL_BINARY = "full_binary"


class NodeId(NamedTuple):
    step: int
    index: int


@dataclass(frozen=True)
class LatticeModel:
    depth: int
    up_prob: float
    structure: Structure = Structure.RECOMBINING

    def count(self, step: int) -> int:
        if self.structure is Structure.RECOMBINING:
            return step + 1
        return 1 << step

    def check_step(self, step: int):
        if not 0 <= step <= self.depth:
            raise InvalidInputError(f"step {step} outside [0, {self.depth}]")

    def check_node(self, node: NodeId):
        self.check_step(node.step)
        if not 0 <= node.index < self.count(node.step):
            raise InvalidInputError(f"node index {node.index} outside step {node.step}")

    def up_child(self, step: int) -> np.ndarray:
        i = np.arange(self.count(step))
        return i + 1 if self.structure is Structure.RECOMBINING else 2 * i + 1

    def down_child(self, step: int) -> np.ndarray:
        i = np.arange(self.count(step))
        return i if self.structure is Structure.RECOMBINING else 2 * i

    def levels(self, step: int) -> np.ndarray:
        """Number of up-moves on the way to each node of the step."""
        i = np.arange(self.count(step))
        if self.structure is Structure.RECOMBINING:
            return i
        return np.array([bin(x).count("1") for x in range(self.count(step))], dtype=int)

    def node_probabilities(self, step: int) -> np.ndarray:
        """Unconditional probability of each node at the step."""
        lv = self.levels(step)
        p = self.up_prob
        base = p ** lv * (1 - p) ** (step - lv)
        if self.structure is Structure.RECOMBINING:
            base = base * np.array([math.comb(step, j) for j in lv], dtype=float)
        return base

    def nodes(self, step: int) -> Iterator[NodeId]:
        for i in range(self.count(step)):
            yield NodeId(step, i)

    def paths_from(self, node: NodeId) -> Iterator[tuple[list[int], float]]:
        """Every continuation from ``node`` to maturity on the full binary
        expansion, as (node index per step 0..N, conditional probability).

        Entries before ``node.step`` are left as -1.
        """
        self.check_node(node)
        p = self.up_prob
        remaining = self.depth - node.step
        for code in range(1 << remaining):
            path = [-1] * node.step + [node.index]
            prob = 1.0
            idx = node.index
            for s in range(remaining):
                up = (code >> (remaining - 1 - s)) & 1
                k = node.step + s
                idx = int(self.up_child(k)[idx] if up else self.down_child(k)[idx])
                prob *= p if up else 1 - p
                path.append(idx)
            yield path, prob

    def full_binary(self) -> "LatticeModel":
        return LatticeModel(self.depth, self.up_prob, Structure.FULL_BINARY)

    def expand(self, proc: AdaptedProcess) -> AdaptedProcess:
        """Map a recombining process onto the full binary tree of the same depth."""
        if self.structure is Structure.FULL_BINARY:
            return proc
        fb = self.full_binary()
        return AdaptedProcess(tuple(proc[k][fb.levels(k)] for k in range(self.depth + 1)))

    def representative(self, step: int) -> np.ndarray:
        """Full-binary index standing in for each node of this lattice."""
        if self.structure is Structure.FULL_BINARY:
            return np.arange(self.count(step))
        return np.array([(1 << j) - 1 for j in range(step + 1)], dtype=int)

    @cached_property
    def non_terminal_count(self) -> int:
        return sum(self.count(k) for k in range(self.depth))


def build_lattice(depth: int, up_prob: float, structure=Structure.RECOMBINING) -> LatticeModel:
    if isinstance(depth, bool) or int(depth) != depth or depth < 1:
        raise InvalidInputError(f"depth must be an integer >= 1, got {depth!r}")
    if not (0.0 < up_prob < 1.0):
        raise InvalidInputError(f"up_prob must lie in (0, 1), got {up_prob!r}")
    try:
        structure = Structure(structure)
    except ValueError:
        raise InvalidInputError(f"unknown lattice structure {structure!r}") from None
    return LatticeModel(int(depth), float(up_prob), structure)


@dataclass(frozen=True, eq=False)
class MartingaleM:
    values: AdaptedProcess
    dm_up: tuple[np.ndarray, ...]
    dm_down: tuple[np.ndarray, ...]
    bracket: AdaptedProcess


def standard_walk_martingale(model: LatticeModel) -> MartingaleM:
    """Normalised walk: zero conditional mean and unit conditional variance."""
    p = model.up_prob
    s = math.sqrt(p * (1 - p))
    if p == 0.5:
        up, down = 1.0, -1.0
    else:
        up, down = (1 - p) / s, -p / s
    vals, br, dus, dds = [np.zeros(1)], [np.zeros(1)], [], []
    for k in range(model.depth):
        n = model.count(k)
        du, dd = np.full(n, up), np.full(n, down)
        nxt, nbr = np.empty(model.count(k + 1)), np.empty(model.count(k + 1))
        # recombining successors are shared; both parents agree on them
        nxt[model.down_child(k)] = vals[k] + dd
        nxt[model.up_child(k)] = vals[k] + du
        nbr[model.down_child(k)] = br[k] + dd ** 2
        nbr[model.up_child(k)] = br[k] + du ** 2
        vals.append(nxt)
        br.append(nbr)
        dus.append(du)
        dds.append(dd)
    return MartingaleM(AdaptedProcess(tuple(vals)), tuple(dus), tuple(dds), AdaptedProcess(tuple(br)))


def conditional_expectation(model: LatticeModel, x, step: int) -> np.ndarray:
    """E[x_{step+1} | node] for every node at ``step``.

    ``x`` may be an AdaptedProcess or the array of values at ``step + 1``.
    """
    if not 0 <= step < model.depth:
        raise InvalidInputError(f"step {step} outside [0, {model.depth - 1}]")
    nxt = x[step + 1] if isinstance(x, AdaptedProcess) else np.asarray(x, dtype=float)
    if nxt.shape != (model.count(step + 1),):
        raise InvalidInputError("values have the wrong number of nodes")
    p = model.up_prob
    return p * nxt[model.up_child(step)] + (1 - p) * nxt[model.down_child(step)]


def martingale_of(model: LatticeModel, terminal) -> AdaptedProcess:
    """The conditional-expectation martingale E[terminal | F_k] at every step."""
    vals = [np.asarray(terminal, dtype=float)]
    if vals[0].shape != (model.count(model.depth),):
        raise InvalidInputError("terminal data has the wrong number of nodes")
    for k in range(model.depth - 1, -1, -1):
        vals.append(conditional_expectation(model, vals[-1], k))
    return AdaptedProcess(tuple(reversed(vals)))


def representation_coefficient(model: LatticeModel, m: MartingaleM, y_next, step: int) -> np.ndarray:
    """Z at every node of ``step`` with y_next - E[y_next | node] = Z * dM on both branches."""
    if not 0 <= step < model.depth:
        raise InvalidInputError(f"step {step} outside [0, {model.depth - 1}]")
    nxt = y_next[step + 1] if isinstance(y_next, AdaptedProcess) else np.asarray(y_next, dtype=float)
    gap = m.dm_up[step] - m.dm_down[step]
    if np.any(gap == 0):
        i = int(np.flatnonzero(gap == 0)[0])
        raise RepresentationError(f"degenerate martingale branch at node ({step},{i})")
    return (nxt[model.up_child(step)] - nxt[model.down_child(step)]) / gap


def check_process(model: LatticeModel, proc: AdaptedProcess, name: str = "process"):
    _check_shape(model, proc, name)
    return proc
