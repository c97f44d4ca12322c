"""Batch runner: ``bsdelab <command> --config FILE [--out DIR] [--seed N] [--quiet]``.

Exit codes: 0 success, 1 verification failures, 2 invalid input,
3 scheme infeasible or not converging. Every result is computed before any
file is written, so a nonzero exit leaves no partial CSV behind.
"""
from __future__ import annotations

import argparse
import csv
import io
import math
import sys
from pathlib import Path

import numpy as np

from .config import (ExperimentConfig, build_driver, build_generator, build_model, build_process,
                     build_property_config, load_config)
from .errors import InvalidInputError, NonConvergenceError, SchemeInfeasibleError
from .gbsde import solve_backward
from .lattice import LatticeModel, standard_walk_martingale
from .limits import (GameSpec, LadderKind, TerminalMode, brute_force_dynkin,
                     brute_force_optimal_stop, constrained_snell, dynkin_value, gamma_reward,
                     ladder_gbsde, ladder_reflected_down, ladder_reflected_up, snell_of_gamma)
from .processes import zeros
from .rgbsde import solve_reflected
from .verify import run_checks

EXIT_OK, EXIT_FAILURES, EXIT_INVALID, EXIT_INFEASIBLE = 0, 1, 2, 3
COMMANDS = ("solve", "reflect", "penalize", "oracle", "verify", "report")
MATCH_TOL = 1e-12


def fmt(x) -> str:
    """Shortest round-trip decimal for floats, lowercase words for booleans."""
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return repr(float(x))


def render_csv(header, rows) -> str:
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    w.writerow(header)
    for row in rows:
        w.writerow([fmt(v) for v in row])
    return buf.getvalue()


class Outputs:
    """Collects (file name, text) pairs and writes them only when asked."""

    def __init__(self):
        self.files: dict[str, str] = {}
        self.lines: list[str] = []

    def add(self, name: str, text: str):
        self.files[name] = text

    def say(self, line: str):
        self.lines.append(line)

    def write(self, out_dir: Path):
        out_dir.mkdir(parents=True, exist_ok=True)
        for name, text in self.files.items():
            (out_dir / name).write_text(text)


# ---------------------------------------------------------------------------
# commands


def _setup(cfg: ExperimentConfig):
    model = build_model(cfg)
    return model, standard_walk_martingale(model), build_driver(cfg, model)


def _solution_rows(model: LatticeModel, driver, y, z, dk):
    for k in range(model.depth + 1):
        last = k == model.depth
        for i in range(model.count(k)):
            yield (k, i, y[k][i], None if last else z[k][i], dk[k][i] if not last else 0.0,
                   None if last else driver.increments[k][i],
                   False if last else bool(driver.right_support[k][i]))


SOLUTION_HEADER = ("step", "node_index", "Y", "Z", "dK", "dA", "in_right_support")


def cmd_solve(cfg: ExperimentConfig, out: Outputs) -> int:
    model, m, driver = _setup(cfg)
    gen = build_generator(cfg, model)
    xi = build_process(cfg, model, "xi")
    sol = solve_backward(model, m, driver, gen, xi, tol=cfg.solve.tol)
    rows = _solution_rows(model, driver, sol.y, sol.z, zeros(model))
    out.add("solve.csv", render_csv(SOLUTION_HEADER, rows))
    out.say(f"solve: Y_0 = {fmt(sol.y[0][0])}, path identity defect {sol.residual:.3e}")
    return EXIT_OK


def cmd_reflect(cfg: ExperimentConfig, out: Outputs) -> int:
    model, m, driver = _setup(cfg)
    gen = build_generator(cfg, model)
    zeta = build_process(cfg, model, "zeta")
    sol = solve_reflected(model, m, driver, gen, zeta, tol=cfg.solve.tol)
    out.add("reflect.csv", render_csv(SOLUTION_HEADER,
                                      _solution_rows(model, driver, sol.y, sol.z, sol.k_inc)))
    out.say(f"reflect: Y_0 = {fmt(sol.y[0][0])}, path identity defect {sol.residual:.3e}")
    return EXIT_OK


def _game(cfg, model, driver):
    zeta = build_process(cfg, model, "zeta")
    eta = build_process(cfg, model, "eta")
    xi = build_process(cfg, model, "xi").terminal if cfg.xi is not None else None
    return GameSpec(zeta, eta, driver, xi).check(model)


def cmd_penalize(cfg: ExperimentConfig, out: Outputs) -> int:
    if cfg.penalize is None:
        raise InvalidInputError("penalize needs a 'penalize' section")
    model, m, driver = _setup(cfg)
    spec = cfg.penalize
    if spec.kind is LadderKind.GBSDE_UP:
        rep = ladder_gbsde(model, m, driver, build_process(cfg, model, "xi"),
                           build_process(cfg, model, "eta"), spec.n_values)
    elif spec.kind is LadderKind.REFLECTED_UP:
        rep = ladder_reflected_up(model, m, driver, build_process(cfg, model, "zeta"),
                                  build_process(cfg, model, "eta"), spec.n_values)
    else:
        rep = ladder_reflected_down(model, m, driver, _game(cfg, model, driver), spec.n_values)
    mode = rep.terminal_mode.value if rep.terminal_mode is not None else None
    rows = [(n, err, ok, root, rep.oracle_root, mode)
            for n, err, ok, root in zip(rep.n_values, rep.sup_errors, rep.monotone_steps, rep.root_values)]
    out.add("penalize.csv", render_csv(
        ("n", "sup_error", "monotone_ok", "root_value", "oracle_root_value", "terminal_mode_matched"), rows))
    out.say(f"penalize {spec.kind.value}: final sup error {rep.sup_errors[-1]:.3e}, "
            f"monotone {fmt(rep.monotone_ok)}" + (f", terminal mode {mode}" if mode else ""))
    return EXIT_OK


def _oracle_rows(model, backward, brute, minimax=None, with_minimax=False):
    for k in range(model.depth + 1):
        for i in range(model.count(k)):
            b = backward[k][i]
            if brute is None:
                row = (k, i, b, None, None)
            else:
                row = (k, i, b, brute[k][i], abs(b - brute[k][i]) <= MATCH_TOL)
            if with_minimax:
                row += (None if minimax is None else abs(brute[k][i] - minimax[k][i]) <= MATCH_TOL,)
            yield row


ORACLE_HEADER = ("step", "node_index", "value_backward", "value_bruteforce", "equal_flag")


def cmd_oracle(cfg: ExperimentConfig, out: Outputs) -> int:
    if cfg.oracle is None:
        raise InvalidInputError("oracle needs an 'oracle' section")
    model, _, driver = _setup(cfg)
    spec = cfg.oracle
    if spec.kind == "dynkin":
        game = _game(cfg, model, driver)
        for mode in TerminalMode:
            backward = dynkin_value(model, driver, game, mode)
            infsup = supinf = None
            if spec.brute_force:
                infsup, supinf = brute_force_dynkin(model, driver, game, mode)
            out.add(f"oracle_{mode.value}.csv", render_csv(
                ORACLE_HEADER + ("minimax_flag",), _oracle_rows(model, backward, infsup, supinf, with_minimax=True)))
            out.say(f"oracle dynkin/{mode.value}: root {fmt(backward[0][0])}"
                    + (f", brute force {fmt(infsup[0][0])}, sup-inf {fmt(supinf[0][0])}"
                       if spec.brute_force else ""))
        return EXIT_OK
    eta = build_process(cfg, model, "eta")
    if spec.kind == "constrained_snell":
        xi = build_process(cfg, model, "xi")
        backward = constrained_snell(model, driver, xi, eta)
        reward, constrained = eta.replace_step(model.depth, xi.terminal), True
    else:
        zeta = build_process(cfg, model, "zeta")
        backward = snell_of_gamma(model, driver, zeta, eta)
        reward, constrained = gamma_reward(model, driver, zeta, eta), False
    brute = brute_force_optimal_stop(model, driver, reward, constrained) if spec.brute_force else None
    out.add("oracle.csv", render_csv(ORACLE_HEADER, _oracle_rows(model, backward, brute)))
    out.say(f"oracle {spec.kind}: root {fmt(backward[0][0])}"
            + (f", brute force {fmt(brute[0][0])}" if brute is not None else ""))
    return EXIT_OK


def cmd_verify(cfg: ExperimentConfig, out: Outputs) -> int:
    pcfg = build_property_config(cfg)
    checks = cfg.verify.checks if cfg.verify is not None else None
    report = run_checks(pcfg, checks) if checks else run_checks(pcfg)
    rows = [(c.name, c.trials, c.failures, c.worst_violation, c.seed) for c in report.checks]
    out.add("verify.csv", render_csv(("name", "trials", "failures", "worst_violation", "seed"), rows))
    for c in report.checks:
        worst = "n/a" if not math.isfinite(c.worst_violation) else f"{c.worst_violation:.3e}"
        out.say(f"verify {c.name}: {c.failures}/{c.trials} failed, {c.skipped} skipped, "
                f"worst {worst} (trial {c.worst_trial}, digest {c.worst_digest or '-'})")
    return EXIT_OK if report.ok else EXIT_FAILURES


def cmd_report(cfg: ExperimentConfig, out: Outputs) -> int:
    """Every section the config can drive, plus summary.txt."""
    code = EXIT_OK
    ran = []
    if cfg.xi is not None:
        code = max(code, cmd_solve(cfg, out))
        ran.append("solve")
    if cfg.zeta is not None:
        code = max(code, cmd_reflect(cfg, out))
        ran.append("reflect")
    if cfg.penalize is not None:
        code = max(code, cmd_penalize(cfg, out))
        ran.append("penalize")
    if cfg.oracle is not None:
        code = max(code, cmd_oracle(cfg, out))
        ran.append("oracle")
    if cfg.verify is not None:
        code = max(code, cmd_verify(cfg, out))
        ran.append("verify")
    if not ran:
        raise InvalidInputError("report found nothing to run in the config")
    out.add("summary.txt", "\n".join(out.lines + [f"exit code {code}"]) + "\n")
    return code


HELP = {
    "solve": "solve the plain equation with terminal xi",
    "reflect": "solve the reflected equation with lower obstacle zeta",
    "penalize": "run a penalization ladder against its limit oracle",
    "oracle": "backward-induction oracle, optionally checked by enumeration",
    "verify": "randomised property checks",
    "report": "run every section present in the config and write summary.txt",
}

HANDLERS = {"solve": cmd_solve, "reflect": cmd_reflect, "penalize": cmd_penalize,
            "oracle": cmd_oracle, "verify": cmd_verify, "report": cmd_report}


# ---------------------------------------------------------------------------
# entry point


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="bsdelab", description=__doc__.splitlines()[0])
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name, help=HELP[name])
        p.add_argument("--config", required=True, type=Path, help="YAML or JSON experiment file")
        p.add_argument("--out", type=Path, default=None, help="output directory (overrides config)")
        p.add_argument("--seed", type=int, default=None, help="seed (overrides config)")
        p.add_argument("--quiet", action="store_true", help="suppress the human-readable summary")
    return parser


def _fail(kind: str, exc: Exception, code: int) -> int:
    reason = " ".join(str(exc).split())
    print(f"error\t{kind}\t{type(exc).__name__}\t{reason}", file=sys.stderr)
    return code


def run(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg = cfg.model_copy(update={"seed": args.seed})
        out = Outputs()
        code = HANDLERS[args.command](cfg, out)
    except (SchemeInfeasibleError, NonConvergenceError) as exc:
        return _fail("infeasible", exc, EXIT_INFEASIBLE)
    except InvalidInputError as exc:
        return _fail("validation", exc, EXIT_INVALID)
    if code in (EXIT_OK, EXIT_FAILURES):
        out.write(args.out if args.out is not None else Path(cfg.output.dir))
    if not args.quiet:
        for line in out.lines:
            print(line)
    return code


def main():
    sys.exit(run())


if __name__ == "__main__":
    main()
