"""Adapted processes, the nondecreasing driver, generators and stopping rules."""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from enum import Enum
from typing import Callable, Sequence

import numpy as np

from .errors import InvalidInputError


@dataclass(frozen=True, eq=False)
class AdaptedProcess:
    """One real value per lattice node, stored as one array per step."""

    values: tuple[np.ndarray, ...]

    def __post_init__(self):
        vals = tuple(np.asarray(v, dtype=float) for v in self.values)
        for k, v in enumerate(vals):
            if v.ndim != 1:
                raise InvalidInputError(f"step {k}: expected a 1-d array")
            if not np.all(np.isfinite(v)):
                raise InvalidInputError(f"step {k}: non-finite value")
            v.setflags(write=False)
        object.__setattr__(self, "values", vals)

    def __getitem__(self, step: int) -> np.ndarray:
        return self.values[step]

    def __len__(self) -> int:
        return len(self.values)

    @property
    def depth(self) -> int:
        return len(self.values) - 1

    @property
    def terminal(self) -> np.ndarray:
        return self.values[-1]

    def _zip(self, other, op):
        if isinstance(other, AdaptedProcess):
            if len(other) != len(self):
                raise InvalidInputError("processes live on different lattices")
            return AdaptedProcess(tuple(op(a, b) for a, b in zip(self.values, other.values)))
        return AdaptedProcess(tuple(op(a, other) for a in self.values))

    def __add__(self, other):
        return self._zip(other, np.add)

    __radd__ = __add__

    def __sub__(self, other):
        return self._zip(other, np.subtract)

    def __rsub__(self, other):
        return self._zip(other, lambda a, b: b - a)

    def __mul__(self, other):
        return self._zip(other, np.multiply)

    __rmul__ = __mul__

    def __neg__(self):
        return AdaptedProcess(tuple(-v for v in self.values))

    def maximum(self, other):
        return self._zip(other, np.maximum)

    def minimum(self, other):
        return self._zip(other, np.minimum)

    def map(self, fn: Callable[[np.ndarray], np.ndarray]) -> "AdaptedProcess":
        return AdaptedProcess(tuple(fn(v) for v in self.values))

    def sup_norm(self) -> float:
        return max(float(np.max(np.abs(v))) for v in self.values)

    def min_value(self) -> float:
        return min(float(np.min(v)) for v in self.values)

    def max_value(self) -> float:
        return max(float(np.max(v)) for v in self.values)

    def replace_step(self, step: int, arr) -> "AdaptedProcess":
        vals = list(self.values)
        vals[step] = np.asarray(arr, dtype=float)
        return AdaptedProcess(tuple(vals))

    def allclose(self, other: "AdaptedProcess", atol: float = 1e-12) -> bool:
        return (self - other).sup_norm() <= atol

    def to_lists(self) -> list[list[float]]:
        return [v.tolist() for v in self.values]


def _check_shape(model, proc: AdaptedProcess, name: str = "process"):
    if len(proc) != model.depth + 1:
        raise InvalidInputError(f"{name}: expected {model.depth + 1} steps, got {len(proc)}")
    for k in range(model.depth + 1):
        if proc[k].shape != (model.count(k),):
            raise InvalidInputError(
                f"{name}: step {k} has {proc[k].shape[0]} values, expected {model.count(k)}")


def constant(model, c: float) -> AdaptedProcess:
    return AdaptedProcess(tuple(np.full(model.count(k), float(c)) for k in range(model.depth + 1)))


def zeros(model) -> AdaptedProcess:
    return constant(model, 0.0)


def from_levels(model, fn: Callable[[int, np.ndarray], np.ndarray]) -> AdaptedProcess:
    """Build a process from a function of (step, number of up-moves)."""
    return AdaptedProcess(tuple(
        np.broadcast_to(np.asarray(fn(k, model.levels(k)), dtype=float), (model.count(k),)).copy()
        for k in range(model.depth + 1)))


def from_level_table(model, table: Sequence[Sequence[float]]) -> AdaptedProcess:
    """`table[k][j]` is the value at step k after j up-moves."""
    if len(table) != model.depth + 1:
        raise InvalidInputError(f"level table needs {model.depth + 1} rows, got {len(table)}")
    rows = []
    for k, row in enumerate(table):
        row = np.asarray(row, dtype=float)
        if row.shape != (k + 1,):
            raise InvalidInputError(f"level table row {k} needs {k + 1} entries")
        rows.append(row[model.levels(k)])
    return AdaptedProcess(tuple(rows))


def from_node_table(model, table: Sequence[Sequence[float]]) -> AdaptedProcess:
    proc = AdaptedProcess(tuple(np.asarray(r, dtype=float) for r in table))
    _check_shape(model, proc, "node table")
    return proc


def terminal_only(model, terminal) -> AdaptedProcess:
    """Embed terminal data as a process (earlier steps are zero and unused)."""
    terminal = np.asarray(terminal, dtype=float)
    if terminal.shape != (model.count(model.depth),):
        raise InvalidInputError("terminal data has the wrong number of nodes")
    vals = [np.zeros(model.count(k)) for k in range(model.depth)] + [terminal]
    return AdaptedProcess(tuple(vals))


def terminal_values(model, xi) -> np.ndarray:
    """Accept either a process (its last slice is used) or a terminal array."""
    if isinstance(xi, AdaptedProcess):
        _check_shape(model, xi, "terminal process")
        return xi.terminal
    arr = np.asarray(xi, dtype=float)
    if arr.shape != (model.count(model.depth),):
        raise InvalidInputError("terminal data has the wrong number of nodes")
    return arr


# ---------------------------------------------------------------------------
# driver


@dataclass(frozen=True, eq=False)
class Driver:
    """Nondecreasing process A with its per-node increments and right support.

    ``increments[k]`` is A_{k+1} - A_k seen from the step-k node; it must be
    the same on both successors, so on a recombining lattice the driver is
    necessarily deterministic.
    """

    a: AdaptedProcess
    increments: tuple[np.ndarray, ...]
    bound: float
    right_support: tuple[np.ndarray, ...]

    @property
    def depth(self) -> int:
        return self.a.depth

    def in_sbar(self, step: int) -> np.ndarray:
        """Admissible stopping mask: right support before T, every node at T."""
        if step == self.depth:
            return np.ones(self.a[step].shape[0], dtype=bool)
        return self.right_support[step]

    @property
    def min_positive_increment(self) -> float:
        pos = [d[d > 0] for d in self.increments]
        pos = [p for p in pos if p.size]
        return float(min(np.min(p) for p in pos)) if pos else math.inf

    @property
    def max_increment(self) -> float:
        return max((float(np.max(d)) for d in self.increments), default=0.0)


def make_driver(model, a_values: AdaptedProcess) -> Driver:
    _check_shape(model, a_values, "driver")
    if a_values[0][0] != 0.0:
        raise InvalidInputError(f"driver must start at 0, got A_0 = {float(a_values[0][0])!r}")
    incs, support = [], []
    for k in range(model.depth):
        up = a_values[k + 1][model.up_child(k)]
        down = a_values[k + 1][model.down_child(k)]
        if not np.array_equal(up, down):
            bad = int(np.flatnonzero(up != down)[0])
            raise InvalidInputError(
                f"driver increment at node ({k},{bad}) differs between successors; "
                "A_{k+1} must be known at step k")
        inc = up - a_values[k]
        if np.any(inc < 0):
            bad = int(np.flatnonzero(inc < 0)[0])
            raise InvalidInputError(
                f"driver decreases at node ({k},{bad}): increment {float(inc[bad])!r}")
        inc.setflags(write=False)
        rs = inc > 0
        rs.setflags(write=False)
        incs.append(inc)
        support.append(rs)
    return Driver(a=a_values, increments=tuple(incs),
                  bound=float(np.max(a_values.terminal)), right_support=tuple(support))


def driver_from_increments(model, increments: Sequence[Sequence[float]]) -> Driver:
    """Accumulate per-node increments (one array per step 0..N-1) into a driver."""
    if len(increments) != model.depth:
        raise InvalidInputError(f"need {model.depth} increment rows, got {len(increments)}")
    vals = [np.zeros(1)]
    for k, inc in enumerate(increments):
        inc = np.asarray(inc, dtype=float)
        if inc.shape != (model.count(k),):
            raise InvalidInputError(f"increment row {k} needs {model.count(k)} entries")
        nxt = np.empty(model.count(k + 1))
        nxt[model.up_child(k)] = vals[k] + inc
        nxt[model.down_child(k)] = vals[k] + inc
        vals.append(nxt)
    return make_driver(model, AdaptedProcess(tuple(vals)))


def deterministic_driver(model, path: Sequence[float]) -> Driver:
    path = [float(x) for x in path]
    if len(path) != model.depth + 1:
        raise InvalidInputError(f"deterministic driver needs {model.depth + 1} values")
    return make_driver(model, AdaptedProcess(tuple(np.full(model.count(k), path[k])
                                                   for k in range(model.depth + 1))))


def exp_weight(driver: Driver, beta: float) -> AdaptedProcess:
    return driver.a.map(lambda a: np.exp(beta * a))


def exp_integral_weights(model, driver: Driver, n: float, from_step: int,
                         path: Sequence[int]) -> tuple[list[tuple[int, float]], float]:
    """Telescoping weights of n e^{n(A_from - A_s)} dA_s along one path.

    ``path`` lists the node index at every step 0..N. Returns the per-step
    weights for steps ``from_step..N-1`` and the terminal mass
    e^{n(A_from - A_N)}; together they sum to one.
    """
    if n < 0:
        raise InvalidInputError("penalty level must be nonnegative")
    a_from = driver.a[from_step][path[from_step]]
    weights = []
    for k in range(from_step, model.depth):
        lead = math.exp(n * (a_from - driver.a[k][path[k]]))
        inc = driver.increments[k][path[k]]
        weights.append((k, -lead * math.expm1(-n * inc)))
    terminal = math.exp(n * (a_from - driver.a[model.depth][path[model.depth]]))
    return weights, terminal


def implicit_integral_weights(model, driver: Driver, n: float, from_step: int,
                              path: Sequence[int]) -> tuple[list[tuple[int, float]], float]:
    """Same partition of unity built from the backward-Euler kernel 1/(1 + n dA)."""
    if n < 0:
        raise InvalidInputError("penalty level must be nonnegative")
    weights, survive = [], 1.0
    for k in range(from_step, model.depth):
        x = n * driver.increments[k][path[k]]
        weights.append((k, survive * x / (1.0 + x)))
        survive /= 1.0 + x
    return weights, survive


# ---------------------------------------------------------------------------
# generators


class Monotonicity(Enum):
    NON_INCREASING = "nonincreasing"
    UNKNOWN = "unknown"


class Sign(Enum):
    NON_NEGATIVE = "nonnegative"
    NON_POSITIVE = "nonpositive"
    UNKNOWN = "unknown"


# (step, node indices, c, dA) -> exact solution of y = c + g(step, node, y) * dA
NodeSolver = Callable[[int, np.ndarray, np.ndarray, np.ndarray], np.ndarray]


@dataclass(frozen=True)
class Generator:
    """Vectorised g(step, nodes, y) with its Lipschitz constant and flags.

    ``node_solver`` is set for forms whose implicit node equation has a
    closed-form solution; the solvers then skip the contraction gate.
    """

    eval: Callable[[int, np.ndarray, np.ndarray], np.ndarray]
    lipschitz: float
    monotone: Monotonicity = Monotonicity.UNKNOWN
    sign: Sign = Sign.UNKNOWN
    node_solver: NodeSolver | None = field(default=None, compare=False)
    name: str = "custom"

    def __call__(self, step, nodes, y):
        return np.asarray(self.eval(step, nodes, y), dtype=float)

    @property
    def exact(self) -> bool:
        return self.node_solver is not None


def _take(values, step, nodes):
    """Resolve a scalar-or-process coefficient at the given nodes of one step."""
    if isinstance(values, AdaptedProcess):
        return values[step][nodes]
    return np.full(np.shape(nodes), float(values))


def zero_generator() -> Generator:
    return Generator(eval=lambda k, nodes, y: np.zeros_like(y, dtype=float), lipschitz=0.0,
                     monotone=Monotonicity.NON_INCREASING, sign=Sign.NON_NEGATIVE,
                     node_solver=lambda k, nodes, c, da: np.array(c, dtype=float),
                     name="zero")


def constant_generator(value) -> Generator:
    """g = value, where value is a scalar or an AdaptedProcess."""
    def ev(k, nodes, y):
        return np.broadcast_to(_take(value, k, nodes), np.shape(y)).astype(float)

    def solve(k, nodes, c, da):
        return c + _take(value, k, nodes) * da

    lo = value.min_value() if isinstance(value, AdaptedProcess) else float(value)
    hi = value.max_value() if isinstance(value, AdaptedProcess) else float(value)
    sign = Sign.NON_NEGATIVE if lo >= 0 else Sign.NON_POSITIVE if hi <= 0 else Sign.UNKNOWN
    return Generator(eval=ev, lipschitz=0.0, monotone=Monotonicity.NON_INCREASING, sign=sign,
                     node_solver=solve, name="constant")


def linear_generator(intercept, slope) -> Generator:
    """g(y) = intercept - slope * y with slope >= 0 (scalars or processes)."""
    smax = slope.max_value() if isinstance(slope, AdaptedProcess) else float(slope)
    smin = slope.min_value() if isinstance(slope, AdaptedProcess) else float(slope)
    if smin < 0:
        raise InvalidInputError("linear generator slope must be nonnegative")

    def ev(k, nodes, y):
        return _take(intercept, k, nodes) - _take(slope, k, nodes) * y

    def solve(k, nodes, c, da):
        return (c + _take(intercept, k, nodes) * da) / (1.0 + _take(slope, k, nodes) * da)

    return Generator(eval=ev, lipschitz=smax, monotone=Monotonicity.NON_INCREASING,
                     node_solver=solve, name="linear")


def clamped_linear_generator(intercept, slope, lo: float, hi: float) -> Generator:
    """g(y) = intercept - slope * clamp(y, lo, hi).

    Lipschitz with constant max|slope|; nonincreasing when slope >= 0. The
    node equation is solved exactly whenever 1 + slope * dA > 0.
    """
    if not lo < hi:
        raise InvalidInputError("clamp bounds need lo < hi")
    smax = slope.max_value() if isinstance(slope, AdaptedProcess) else float(slope)
    smin = slope.min_value() if isinstance(slope, AdaptedProcess) else float(slope)

    def ev(k, nodes, y):
        return _take(intercept, k, nodes) - _take(slope, k, nodes) * np.clip(y, lo, hi)

    def solve(k, nodes, c, da):
        a = _take(intercept, k, nodes)
        b = _take(slope, k, nodes)
        if np.any(1.0 + b * da <= 0):
            raise InvalidInputError("clamped-linear node equation is not uniquely solvable")
        mid = (c + a * da) / (1.0 + b * da)
        below = c + (a - b * lo) * da
        above = c + (a - b * hi) * da
        return np.where(below < lo, below, np.where(above > hi, above, mid))

    return Generator(eval=ev, lipschitz=max(abs(smax), abs(smin)),
                     monotone=Monotonicity.NON_INCREASING if smin >= 0 else Monotonicity.UNKNOWN,
                     node_solver=solve, name="clamped_linear")


def node_solve_penalty_up(c, eta, n, da):
    """Unique solution of y = c + n dA (eta - y)^+."""
    c = np.asarray(c, dtype=float)
    x = n * np.asarray(da, dtype=float)
    return np.where(c >= eta, c, (c + x * eta) / (1.0 + x))


def node_solve_penalty_down(c, eta, n, da):
    """Unique solution of y = c - n dA (y - eta)^+."""
    c = np.asarray(c, dtype=float)
    x = n * np.asarray(da, dtype=float)
    return np.where(c <= eta, c, (c + x * eta) / (1.0 + x))


def penalty_up_generator(eta, n: float) -> Generator:
    """g(y) = n (eta - y)^+, nonnegative and nonincreasing."""
    if n < 0:
        raise InvalidInputError("penalty level must be nonnegative")
    return Generator(
        eval=lambda k, nodes, y: n * np.maximum(_take(eta, k, nodes) - y, 0.0),
        lipschitz=float(n), monotone=Monotonicity.NON_INCREASING, sign=Sign.NON_NEGATIVE,
        node_solver=lambda k, nodes, c, da: node_solve_penalty_up(c, _take(eta, k, nodes), n, da),
        name="penalty_up")


def penalty_down_generator(eta, n: float) -> Generator:
    """g(y) = -n (y - eta)^+, nonpositive and nonincreasing."""
    if n < 0:
        raise InvalidInputError("penalty level must be nonnegative")
    return Generator(
        eval=lambda k, nodes, y: -n * np.maximum(y - _take(eta, k, nodes), 0.0),
        lipschitz=float(n), monotone=Monotonicity.NON_INCREASING, sign=Sign.NON_POSITIVE,
        node_solver=lambda k, nodes, c, da: node_solve_penalty_down(c, _take(eta, k, nodes), n, da),
        name="penalty_down")


def sine_generator(intercept, amplitude: float, frequency: float = 1.0) -> Generator:
    """g(y) = intercept + amplitude * sin(frequency * y); no closed-form node solve."""
    return Generator(
        eval=lambda k, nodes, y: _take(intercept, k, nodes) + amplitude * np.sin(frequency * y),
        lipschitz=abs(amplitude * frequency), name="sine")


def check_generator(gen: Generator, steps, rng: np.random.Generator, samples: int = 256,
                    spread: float = 10.0) -> bool:
    """Spot-check the declared Lipschitz constant and flags by sampling."""
    for k, count in steps:
        nodes = rng.integers(0, count, size=samples)
        y1 = rng.uniform(-spread, spread, size=samples)
        y2 = rng.uniform(-spread, spread, size=samples)
        g1, g2 = gen(k, nodes, y1), gen(k, nodes, y2)
        if np.any(np.abs(g1 - g2) > gen.lipschitz * np.abs(y1 - y2) * (1 + 1e-12) + 1e-12):
            return False
        if gen.monotone is Monotonicity.NON_INCREASING:
            if np.any((g1 - g2) * np.sign(y1 - y2) > 1e-12):
                return False
        if gen.sign is Sign.NON_NEGATIVE and np.any(np.minimum(g1, g2) < 0):
            return False
        if gen.sign is Sign.NON_POSITIVE and np.any(np.maximum(g1, g2) > 0):
            return False
    return True


# ---------------------------------------------------------------------------
# stopping rules


@dataclass(frozen=True, eq=False)
class StoppingRule:
    """Per-node stop flags with first-hit semantics.

    ``stop[k][i]`` is the decision at node (k, i). Terminal nodes always
    stop. A constrained rule may only stop on admissible (S-bar) nodes.
    """

    stop: tuple[np.ndarray, ...]
    constrained: bool = False

    def __post_init__(self):
        stop = tuple(np.asarray(s, dtype=bool) for s in self.stop)
        if not np.all(stop[-1]):
            raise InvalidInputError("a stopping rule must stop at every terminal node")
        for s in stop:
            s.setflags(write=False)
        object.__setattr__(self, "stop", stop)

    def validate(self, driver: Driver):
        if not self.constrained:
            return self
        for k, s in enumerate(self.stop):
            bad = s & ~driver.in_sbar(k)
            if np.any(bad):
                i = int(np.flatnonzero(bad)[0])
                raise InvalidInputError(
                    f"constrained rule stops at node ({k},{i}) outside the right support")
        return self


def make_stopping_rule(model, stop_nodes, constrained: bool = False,
                       driver: Driver | None = None) -> StoppingRule:
    """Rule that stops at the listed (step, index) nodes and at maturity."""
    stop = [np.zeros(model.count(k), dtype=bool) for k in range(model.depth + 1)]
    stop[-1][:] = True
    for k, i in stop_nodes:
        stop[k][i] = True
    rule = StoppingRule(tuple(stop), constrained)
    if constrained:
        if driver is None:
            raise InvalidInputError("a constrained rule needs the driver to validate against")
        rule.validate(driver)
    return rule


def realized_stop(rule: StoppingRule, path: Sequence[int], start: int = 0) -> int:
    """First step at or after ``start`` where the path meets a stop flag."""
    for k in range(start, len(rule.stop)):
        if rule.stop[k][path[k]]:
            return k
    raise AssertionError("unreachable: terminal step always stops")
