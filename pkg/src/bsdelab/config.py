"""Experiment configuration: schema, loading, dumping and object builders.

Configs are YAML documents (plain JSON is accepted too). Every section is a
pydantic model with unknown keys rejected, so a typo fails loudly instead of
falling back to a default.
"""
from __future__ import annotations

from pathlib import Path
from typing import Annotated, Literal, Optional, Union

import numpy as np
import yaml
from pydantic import BaseModel, ConfigDict, Field, ValidationError

from .errors import InvalidInputError
from .lattice import LatticeModel, build_lattice, standard_walk_martingale
from .limits import DEFAULT_N_VALUES, LadderKind
from .processes import (AdaptedProcess, Driver, Generator, clamped_linear_generator, constant,
                        constant_generator, deterministic_driver, driver_from_increments,
                        from_level_table, from_node_table, linear_generator,
                        penalty_down_generator, penalty_up_generator, sine_generator,
                        zero_generator)
from .verify import PropertyConfig, Tolerances

_SALTS = {"driver": 1, "xi": 2, "zeta": 3, "eta": 4}


class _Strict(BaseModel):
    model_config = ConfigDict(extra="forbid")


class LatticeSpec(_Strict):
    depth: int = Field(ge=1)
    up_prob: float = Field(0.5, gt=0.0, lt=1.0)
    structure: Literal["recombining", "full_binary"] = "recombining"


class DeterministicDriver(_Strict):
    kind: Literal["deterministic"]
    path: list[float]


class TableDriver(_Strict):
    """Per-node increments, one row per step 0..N-1."""
    kind: Literal["table"]
    increments: list[list[float]]


class PresetDriver(_Strict):
    kind: Literal["preset"]
    name: Literal["ramp_driver", "zero"]
    total: float = Field(1.0, ge=0.0)


class UniformDriver(_Strict):
    kind: Literal["uniform"]
    lo: float = Field(0.0, ge=0.0)
    hi: float = Field(0.2, ge=0.0)
    zero_prob: float = Field(0.0, ge=0.0, le=1.0)


DriverSpec = Annotated[Union[DeterministicDriver, TableDriver, PresetDriver, UniformDriver],
                       Field(discriminator="kind")]


class ConstantProcess(_Strict):
    kind: Literal["constant"]
    value: float


class LevelTableProcess(_Strict):
    """Row k lists the value for each number of up-moves 0..k."""
    kind: Literal["table"]
    rows: list[list[float]]


class NodeTableProcess(_Strict):
    kind: Literal["node_table"]
    rows: list[list[float]]


class UniformProcess(_Strict):
    kind: Literal["uniform"]
    lo: float = 0.0
    hi: float = 1.0


class PresetProcess(_Strict):
    kind: Literal["preset"]
    name: Literal["walk_terminal", "walk", "constant"]
    value: float = 0.0
    scale: float = 1.0


ProcessSpec = Annotated[Union[ConstantProcess, LevelTableProcess, NodeTableProcess, UniformProcess,
                              PresetProcess], Field(discriminator="kind")]


class GeneratorSpec(_Strict):
    form: Literal["zero", "constant", "linear", "clamped_linear", "sine", "penalty_up",
                  "penalty_down"] = "zero"
    intercept: float = 0.0
    slope: float = Field(0.0, ge=0.0)
    lo: float = -1.0
    hi: float = 1.0
    amplitude: float = 0.0
    frequency: float = 1.0
    n: float = Field(0.0, ge=0.0)


class SolveSpec(_Strict):
    tol: float = Field(1e-12, gt=0.0)


class PenalizeSpec(_Strict):
    kind: LadderKind = LadderKind.GBSDE_UP
    n_values: list[float] = Field(default_factory=lambda: [float(n) for n in DEFAULT_N_VALUES])


class OracleSpec(_Strict):
    kind: Literal["constrained_snell", "snell_of_gamma", "dynkin"] = "constrained_snell"
    brute_force: bool = True


class TolerancesSpec(_Strict):
    comparison: float = Field(1e-12, ge=0.0)
    monotonicity: float = Field(1e-12, ge=0.0)
    stability_slack: float = Field(1.05, ge=0.0)
    dirac: float = Field(1e-6, ge=0.0)
    dirac_threshold: float = Field(20.0, gt=0.0)
    identity: float = Field(1e-10, ge=0.0)
    activity: float = Field(1e-12, ge=0.0)
    contact: float = Field(1e-9, ge=0.0)


class VerifySpec(_Strict):
    checks: list[Literal["comparison", "monotonicity", "stability", "dirac", "identities"]] = Field(
        default_factory=lambda: ["comparison", "monotonicity", "stability", "dirac", "identities"])
    trials: int = 50
    trials_by_check: dict[str, int] = Field(default_factory=dict)
    min_depth: int = 2
    max_depth: int = 8
    da_range: tuple[float, float] = (0.0, 0.3)
    lipschitz_range: tuple[float, float] = (0.0, 2.0)
    stability_max_da: float = 0.02
    beta: Optional[float] = None
    alpha: float = 1.0
    up_prob: float = 0.5
    tolerances: TolerancesSpec = Field(default_factory=TolerancesSpec)


class OutputSpec(_Strict):
    dir: str = "out"


class ExperimentConfig(_Strict):
    lattice: LatticeSpec
    driver: DriverSpec = Field(default_factory=lambda: PresetDriver(kind="preset", name="zero"))
    xi: Optional[ProcessSpec] = None
    zeta: Optional[ProcessSpec] = None
    eta: Optional[ProcessSpec] = None
    generator: GeneratorSpec = Field(default_factory=GeneratorSpec)
    solve: SolveSpec = Field(default_factory=SolveSpec)
    penalize: Optional[PenalizeSpec] = None
    oracle: Optional[OracleSpec] = None
    verify: Optional[VerifySpec] = None
    seed: int = 42
    output: OutputSpec = Field(default_factory=OutputSpec)


# ---------------------------------------------------------------------------
# text round trip


def parse_config(text: str) -> ExperimentConfig:
    try:
        data = yaml.safe_load(text)
    except yaml.YAMLError as exc:
        raise InvalidInputError(f"config is not valid YAML: {exc}") from None
    if not isinstance(data, dict):
        raise InvalidInputError("config must be a mapping at the top level")
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        first = exc.errors()[0]
        where = ".".join(str(p) for p in first["loc"]) or "<root>"
        raise InvalidInputError(f"config field {where}: {first['msg']}") from None


def load_config(path) -> ExperimentConfig:
    try:
        text = Path(path).read_text()
    except OSError as exc:
        raise InvalidInputError(f"cannot read config {path}: {exc.strerror}") from None
    return parse_config(text)


def dump_config(cfg: ExperimentConfig) -> str:
    return yaml.safe_dump(cfg.model_dump(mode="json"), sort_keys=True)


# ---------------------------------------------------------------------------
# builders


def build_model(cfg: ExperimentConfig) -> LatticeModel:
    return build_lattice(cfg.lattice.depth, cfg.lattice.up_prob, cfg.lattice.structure)


def _rng(cfg: ExperimentConfig, name: str) -> np.random.Generator:
    return np.random.default_rng([cfg.seed, _SALTS[name]])


def build_driver(cfg: ExperimentConfig, model: LatticeModel) -> Driver:
    spec = cfg.driver
    if isinstance(spec, DeterministicDriver):
        return deterministic_driver(model, spec.path)
    if isinstance(spec, TableDriver):
        return driver_from_increments(model, spec.increments)
    if isinstance(spec, PresetDriver):
        total = 0.0 if spec.name == "zero" else spec.total
        return deterministic_driver(model, [total * k / model.depth for k in range(model.depth + 1)])
    if spec.hi < spec.lo:
        raise InvalidInputError("driver.hi must be >= driver.lo")
    rng = _rng(cfg, "driver")
    if model.structure.value == "recombining":
        incs = rng.uniform(spec.lo, spec.hi, size=model.depth)
        incs[rng.random(model.depth) < spec.zero_prob] = 0.0
        return driver_from_increments(model, [np.full(model.count(k), incs[k]) for k in range(model.depth)])
    rows = []
    for k in range(model.depth):
        row = rng.uniform(spec.lo, spec.hi, size=model.count(k))
        row[rng.random(model.count(k)) < spec.zero_prob] = 0.0
        rows.append(row)
    return driver_from_increments(model, rows)


def build_process(cfg: ExperimentConfig, model: LatticeModel, name: str) -> AdaptedProcess:
    spec = getattr(cfg, name)
    if spec is None:
        raise InvalidInputError(f"this command needs the {name!r} process")
    if isinstance(spec, ConstantProcess):
        return constant(model, spec.value)
    if isinstance(spec, LevelTableProcess):
        return from_level_table(model, spec.rows)
    if isinstance(spec, NodeTableProcess):
        return from_node_table(model, spec.rows)
    if isinstance(spec, UniformProcess):
        rng = _rng(cfg, name)
        return AdaptedProcess(tuple(rng.uniform(spec.lo, spec.hi, size=model.count(k))
                                    for k in range(model.depth + 1)))
    if spec.name == "constant":
        return constant(model, spec.value)
    walk = standard_walk_martingale(model).values * spec.scale
    if spec.name == "walk":
        return walk
    return AdaptedProcess(tuple(np.zeros(model.count(k)) for k in range(model.depth)) + (walk.terminal,))


def build_generator(cfg: ExperimentConfig, model: LatticeModel) -> Generator:
    g = cfg.generator
    if g.form == "zero":
        return zero_generator()
    if g.form == "constant":
        return constant_generator(g.intercept)
    if g.form == "linear":
        return linear_generator(g.intercept, g.slope)
    if g.form == "clamped_linear":
        return clamped_linear_generator(g.intercept, g.slope, g.lo, g.hi)
    if g.form == "sine":
        return sine_generator(g.intercept, g.amplitude, g.frequency)
    eta = build_process(cfg, model, "eta")
    if g.form == "penalty_up":
        return penalty_up_generator(eta, g.n)
    return penalty_down_generator(eta, g.n)


def build_property_config(cfg: ExperimentConfig) -> PropertyConfig:
    v = cfg.verify or VerifySpec()
    return PropertyConfig(
        trials=v.trials, trials_by_check=dict(v.trials_by_check), min_depth=v.min_depth,
        max_depth=v.max_depth, da_range=tuple(v.da_range), lipschitz_range=tuple(v.lipschitz_range),
        stability_max_da=v.stability_max_da, beta=v.beta, alpha=v.alpha, seed=cfg.seed,
        up_prob=v.up_prob, tolerances=Tolerances(**v.tolerances.model_dump()),
    ).validate()
