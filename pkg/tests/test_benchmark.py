import threading

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st
from scipy import optimize

from apdmmo.benchmark import (
    BudgetExhausted, OutOfBounds, SolutionSet, count_found_optima, found_optima,
    load_problem_table, make_problem, peak_ratio_success_rate,
)

ALL_IDS = [f"F{i}" for i in range(1, 21)]


def test_table_lists_twenty_functions():
    table = load_problem_table()
    assert sorted(table, key=lambda k: int(k[1:])) == ALL_IDS


def test_f1_shape_and_optima():
    spec, _ = make_problem("F1")
    assert (spec.dim, spec.nkp, spec.peak_value) == (1, 2, 200.0)
    np.testing.assert_allclose(spec([[0.0], [30.0]]), [200.0, 200.0])


def test_f2_shape_and_value():
    spec, ev = make_problem("F2")
    assert (spec.dim, spec.nkp, spec.peak_value) == (1, 5, 1.0)
    assert ev.evaluate([[0.1]])[0] == pytest.approx(1.0, abs=1e-15)
    assert ev.used_fes == 1


def test_f20_dimension():
    spec, _ = make_problem("F20")
    assert spec.dim == 20


def test_f4_at_three_two():
    _, ev = make_problem("F4")
    assert ev.evaluate([[3.0, 2.0]])[0] == pytest.approx(200.0, abs=1e-12)


def test_f6_peak_from_dense_scan():
    spec, _ = make_problem("F6")
    g = np.linspace(-10, 10, 801)
    X = np.stack(np.meshgrid(g, g), -1).reshape(-1, 2)
    f = spec(X)
    best = X[np.argmax(f)]
    res = optimize.minimize(lambda x: -spec(x)[0], best, method="Nelder-Mead",
                            options={"xatol": 1e-12, "fatol": 1e-14, "maxiter": 5000})
    assert -res.fun == pytest.approx(186.7309, abs=1e-4)
    assert -res.fun == pytest.approx(spec.peak_value, abs=1e-6)


@pytest.mark.parametrize("pid", [f"F{i}" for i in range(1, 11) if i != 3])
def test_catalogued_optima_reach_peak_value(pid):
    spec, _ = make_problem(pid)
    assert len(spec.known_optima) == spec.nkp
    np.testing.assert_allclose(spec(spec.known_optima), spec.peak_value, atol=1e-9, rtol=0)
    assert np.all(spec.known_optima >= spec.lb) and np.all(spec.known_optima <= spec.ub)


def test_f3_peak_within_smallest_accuracy():
    # the analytic maximum is about 1 - 1.7e-7, so only a tolerance well
    # inside the smallest scoring accuracy (1e-5) can be asserted

    spec, _ = make_problem("F3")
    g = np.linspace(0, 1, 100001)[:, None]
    x0 = g[np.argmax(spec(g))]
    res = optimize.minimize_scalar(lambda t: -spec([[t]])[0], bounds=(x0[0] - 1e-4, x0[0] + 1e-4),
                                   method="bounded", options={"xatol": 1e-12})
    assert -res.fun <= spec.peak_value
    assert spec.peak_value - (-res.fun) < 1e-6


@pytest.mark.parametrize("pid", [f"F{i}" for i in range(11, 21)])
def test_composition_shifts_are_global_optima(pid):
    spec, _ = make_problem(pid, seed=0)
    vals = spec(spec.known_optima)
    assert len(vals) >= spec.nkp
    assert np.sort(vals)[::-1][:spec.nkp] == pytest.approx(spec.peak_value, abs=1e-8)


def test_composition_instance_follows_seed():
    a, _ = make_problem("F11", seed=0)
    b, _ = make_problem("F11", seed=0)
    c, _ = make_problem("F11", seed=1)
    X = np.random.default_rng(0).uniform(a.lb, a.ub, (10, a.dim))
    np.testing.assert_array_equal(a(X), b(X))
    assert not np.allclose(a(X), c(X))


def test_unknown_problem():
    with pytest.raises(KeyError):
        make_problem("F21")


def test_budget_and_bounds_are_enforced():
    spec, ev = make_problem("F1")
    ev.evaluate(np.zeros((spec.max_fes - 1, 1)))
    with pytest.raises(BudgetExhausted):
        ev.evaluate(np.zeros((2, 1)))
    assert ev.used_fes == spec.max_fes - 1
    with pytest.raises(OutOfBounds):
        ev.evaluate([[31.0]])
    ev.evaluate([[0.0]])
    assert ev.remaining == 0


def test_concurrent_submissions_are_counted_once():
    _, ev = make_problem("F2")
    X = np.full((7, 1), 0.3)

    def worker():
        for _ in range(50):
            ev.evaluate(X)

    threads = [threading.Thread(target=worker) for _ in range(8)]
    for t in threads:
        t.start()
    for t in threads:
        t.join()
    assert ev.used_fes == 8 * 50 * 7


def test_override_table(tmp_path):
    path = tmp_path / "over.ini"
    path.write_text("[F1]\nmax_fes = 1234\n")
    spec, ev = make_problem("F1", table=load_problem_table(path))
    assert spec.max_fes == 1234 == ev.max_fes


def _solutions(X, f):
    s = SolutionSet()
    for x, v in zip(X, f):
        s.add(np.atleast_1d(x), v)
    return s


def test_count_examples():
    f1, _ = make_problem("F1")
    assert count_found_optima(f1, _solutions([[0.0], [30.0]], [200.0, 200.0]), 1e-4) == 2
    assert count_found_optima(f1, SolutionSet(), 1e-4) == 0
    f2, _ = make_problem("F2")
    assert count_found_optima(f2, _solutions([[0.1]] * 100, [1.0] * 100), 1e-4) == 1


def test_count_rejects_nonpositive_accuracy():
    f1, _ = make_problem("F1")
    with pytest.raises(ValueError):
        count_found_optima(f1, SolutionSet(), 0.0)


def test_count_is_capped_at_nkp():
    f2, _ = make_problem("F2")
    X = np.linspace(0.1, 0.9, 5)[:, None]
    doubled = np.concatenate([X, X + 0.2 * f2.niche_radius + 1e-3])
    f = np.ones(len(doubled))
    assert count_found_optima(f2, _solutions(doubled, f), 1.0) == 5


def test_ties_keep_insertion_order():
    f2, _ = make_problem("F2")
    a, b = [0.10], [0.10 + 0.5 * f2.niche_radius]
    seeds = found_optima(f2, _solutions([a, b], [1.0, 1.0]), 1e-4)
    np.testing.assert_array_equal(seeds, [a])
    seeds = found_optima(f2, _solutions([b, a], [1.0, 1.0]), 1e-4)
    np.testing.assert_array_equal(seeds, [b])


@settings(max_examples=60, deadline=None)
@given(st.lists(st.tuples(st.floats(0, 1), st.floats(0.9, 1.0)), min_size=0, max_size=40),
       st.floats(1e-5, 0.05), st.floats(1e-5, 0.05), st.randoms(use_true_random=False))
def test_count_monotone_in_accuracy_and_permutation_stable(pairs, acc_a, acc_b, rnd):
    f2, _ = make_problem("F2")
    lo, hi = sorted([acc_a, acc_b])
    sols = _solutions([[x] for x, _ in pairs], [v for _, v in pairs])
    n_lo = count_found_optima(f2, sols, lo)
    assert 0 <= n_lo <= count_found_optima(f2, sols, hi) <= f2.nkp
    # shuffling only solutions with distinct fitness keeps the count
    distinct = {}
    for x, v in pairs:
        distinct.setdefault(v, x)
    items = list(distinct.items())
    rnd.shuffle(items)
    a = _solutions([[x] for v, x in items], [v for v, _ in items])
    items.reverse()
    b = _solutions([[x] for v, x in items], [v for v, _ in items])
    assert count_found_optima(f2, a, hi) == count_found_optima(f2, b, hi)


@pytest.mark.parametrize("npf,nkp,expected", [
    ([3, 5], 5, (0.8, 0.5)), ([5, 5], 5, (1.0, 1.0)), ([0], 4, (0.0, 0.0)),
])
def test_pr_sr_examples(npf, nkp, expected):
    assert peak_ratio_success_rate(npf, nkp) == pytest.approx(expected)


@given(st.integers(1, 30).flatmap(
    lambda k: st.tuples(st.just(k), st.lists(st.integers(0, k), min_size=1, max_size=20))))
def test_pr_sr_ranges(case):
    nkp, npf = case
    pr, sr = peak_ratio_success_rate(npf, nkp)
    assert 0 <= sr <= pr <= 1
    if sr == 1:
        assert pr == 1


def test_pr_sr_errors():
    with pytest.raises(ValueError):
        peak_ratio_success_rate([], 3)
    with pytest.raises(ValueError):
        peak_ratio_success_rate([4], 3)
