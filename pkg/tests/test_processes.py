import math

import numpy as np
import pytest

from bsdelab.errors import InvalidInputError
from bsdelab.lattice import build_lattice
from bsdelab.processes import (AdaptedProcess, StoppingRule, check_generator,
                               clamped_linear_generator, constant, deterministic_driver,
                               driver_from_increments, exp_integral_weights, exp_weight,
                               from_level_table, implicit_integral_weights, linear_generator,
                               make_driver, make_stopping_rule, penalty_down_generator,
                               penalty_up_generator, realized_stop, sine_generator, zeros)


def test_driver_ramp(tree2):
    model, _, driver = tree2
    assert [float(d[0]) for d in driver.increments] == [0.5, 0.5]
    assert all(np.all(driver.right_support[k]) for k in range(2))
    assert driver.bound == 1.0


def test_driver_zero_has_empty_support():
    model = build_lattice(2, 0.5)
    driver = deterministic_driver(model, [0, 0, 0])
    assert not any(np.any(driver.right_support[k]) for k in range(2))
    assert np.all(driver.in_sbar(2))
    assert not np.any(driver.in_sbar(0))


def test_driver_flat_then_increasing():
    model = build_lattice(2, 0.5)
    driver = deterministic_driver(model, [0, 0, 1])
    assert not driver.right_support[0][0]
    assert np.all(driver.right_support[1])


def test_driver_rejects_negative_increment():
    model = build_lattice(2, 0.5)
    with pytest.raises(InvalidInputError, match="decreases"):
        deterministic_driver(model, [0, 1, 0.5])


def test_driver_rejects_nonzero_start():
    model = build_lattice(1, 0.5)
    with pytest.raises(InvalidInputError, match="start at 0"):
        make_driver(model, AdaptedProcess((np.array([0.1]), np.array([0.2, 0.2]))))


def test_driver_rejects_unknown_increment():
    model = build_lattice(1, 0.5)
    with pytest.raises(InvalidInputError, match="successors"):
        make_driver(model, AdaptedProcess((np.array([0.0]), np.array([0.1, 0.2]))))


def test_right_support_means_strict_increase(rng):
    model = build_lattice(4, 0.5, "full_binary")
    incs = [np.where(rng.random(model.count(k)) < 0.4, 0.0, rng.random(model.count(k)))
            for k in range(4)]
    driver = driver_from_increments(model, incs)
    for k in range(4):
        rs = driver.right_support[k]
        up = driver.a[k + 1][model.up_child(k)]
        down = driver.a[k + 1][model.down_child(k)]
        assert np.all((up > driver.a[k])[rs]) and np.all((down > driver.a[k])[rs])
        assert np.all((up == driver.a[k])[~rs])


def test_exp_weight_examples(tree2):
    _, _, driver = tree2
    assert exp_weight(driver, 0.0).to_lists() == [[1.0], [1.0, 1.0], [1.0, 1.0, 1.0]]
    e = exp_weight(driver, 2.0)
    assert e[1][0] == pytest.approx(math.e, abs=1e-15) and e[2][2] == pytest.approx(math.e ** 2, abs=1e-14)
    one = build_lattice(1, 0.5)
    e = exp_weight(deterministic_driver(one, [0, 1]), -1.0)
    assert e[1][0] == pytest.approx(math.exp(-1), abs=1e-16)


def test_exp_weight_monotone(rng):
    model = build_lattice(4, 0.5, "full_binary")
    driver = driver_from_increments(model, [rng.random(model.count(k)) for k in range(4)])
    e = exp_weight(driver, 1.5)
    for k in range(4):
        assert np.all(e[k + 1][model.up_child(k)] >= e[k]) and np.all(e[k + 1][model.down_child(k)] >= e[k])


def test_integral_weights_zero_penalty(tree2):
    model, _, driver = tree2
    weights, terminal = exp_integral_weights(model, driver, 0.0, 0, [0, 0, 0])
    assert [w for _, w in weights] == [0.0, 0.0] and terminal == 1.0


def test_integral_weights_closed_form():
    model = build_lattice(2, 0.5)
    driver = deterministic_driver(model, [0, 1, 1])
    weights, terminal = exp_integral_weights(model, driver, 1.0, 0, [0, 1, 2])
    assert weights[0][1] == pytest.approx(1 - math.exp(-1), abs=1e-16)
    assert weights[1][1] == 0.0
    assert terminal == pytest.approx(math.exp(-1), abs=1e-16)


@pytest.mark.parametrize("kernel", [exp_integral_weights, implicit_integral_weights])
def test_integral_weights_partition_of_unity(kernel, rng):
    model = build_lattice(6, 0.5, "full_binary")
    driver = driver_from_increments(model, [rng.random(model.count(k)) * 0.4 for k in range(6)])
    for n in (0.0, 1.0, 37.0, 4096.0):
        for code in range(0, 64, 7):
            path = [0]
            for k in range(6):
                up = (code >> k) & 1
                path.append(int((model.up_child(k) if up else model.down_child(k))[path[-1]]))
            start = code % 6
            weights, terminal = kernel(model, driver, n, start, path)
            assert all(w >= 0 for _, w in weights) and terminal >= 0
            assert sum(w for _, w in weights) + terminal == pytest.approx(1.0, abs=1e-14)


def test_integral_weights_concentrate(tree2):
    model, _, driver = tree2
    for n in (10.0, 40.0, 80.0):
        weights, terminal = exp_integral_weights(model, driver, n, 0, [0, 1, 2])
        assert 1 - weights[0][1] == pytest.approx(math.exp(-0.5 * n), rel=1e-9)
        assert weights[1][1] + terminal <= math.exp(-0.5 * n) * (1 + 1e-12)


def test_integral_weights_reject_negative(tree2):
    model, _, driver = tree2
    with pytest.raises(InvalidInputError):
        exp_integral_weights(model, driver, -1.0, 0, [0, 0, 0])


def test_realized_stop_examples():
    model = build_lattice(2, 0.5)
    terminal = make_stopping_rule(model, [])
    root = make_stopping_rule(model, [(0, 0)])
    up_only = make_stopping_rule(model, [(1, 1)])
    for path in ([0, 0, 0], [0, 0, 1], [0, 1, 1], [0, 1, 2]):
        assert realized_stop(terminal, path) == 2
        assert realized_stop(root, path) == 0
        assert realized_stop(up_only, path) == (1 if path[1] == 1 else 2)


def test_rule_must_stop_at_maturity():
    with pytest.raises(InvalidInputError):
        StoppingRule((np.array([False]), np.array([True, False])))


def test_constrained_rule_rejects_off_support():
    model = build_lattice(2, 0.5)
    driver = deterministic_driver(model, [0, 0, 1])
    with pytest.raises(InvalidInputError, match="right support"):
        make_stopping_rule(model, [(0, 0)], constrained=True, driver=driver)
    make_stopping_rule(model, [(1, 0)], constrained=True, driver=driver)


def test_level_table_on_full_binary():
    model = build_lattice(2, 0.5, "full_binary")
    proc = from_level_table(model, [[0], [1, 2], [3, 4, 5]])
    assert proc.to_lists() == [[0.0], [1.0, 2.0], [3.0, 4.0, 4.0, 5.0]]


def test_process_is_read_only():
    model = build_lattice(2, 0.5)
    proc = constant(model, 1.0)
    with pytest.raises(ValueError):
        proc[0][0] = 2.0
    with pytest.raises(InvalidInputError):
        AdaptedProcess((np.array([np.nan]),))


def test_process_arithmetic():
    model = build_lattice(2, 0.5)
    a, b = constant(model, 2.0), constant(model, 3.0)
    assert (a - b).max_value() == -1.0
    assert (a * b).min_value() == 6.0
    assert a.maximum(b).allclose(b) and a.minimum(b).allclose(a)
    assert (-a + 2.0).sup_norm() == 0.0
    assert zeros(model).replace_step(2, [1, 2, 3]).terminal.tolist() == [1.0, 2.0, 3.0]


@pytest.mark.parametrize("gen", [
    linear_generator(0.3, 1.5),
    clamped_linear_generator(0.1, 2.0, -1.0, 1.0),
    penalty_up_generator(0.5, 7.0),
    penalty_down_generator(0.5, 7.0),
    sine_generator(0.0, 0.8, 1.0),
])
def test_generators_respect_declared_flags(gen, rng):
    assert check_generator(gen, [(0, 1), (1, 2), (2, 3)], rng)


def test_check_generator_catches_false_lipschitz(rng):
    lying = sine_generator(0.0, 2.0)
    object.__setattr__(lying, "lipschitz", 0.5)
    assert not check_generator(lying, [(0, 1)], rng)


def test_linear_rejects_negative_slope():
    with pytest.raises(InvalidInputError):
        linear_generator(0.0, -1.0)
