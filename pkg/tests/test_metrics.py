import csv

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from protoflow.errors import AccountingError, DataError, EmptyInputError
from protoflow.guided_sampler import SolverConfig, TrajectoryRecord
from protoflow.latent_space import ClassPool, MixtureSpec, sample_mixture_dataset
from protoflow.metrics import (class_hit_rate, closed_form_nfe, coverage, coverage_report,
                               hit_rate, moment_error, nfe_report, probe_eval, representativeness,
                               write_coverage_csv)
from protoflow.prototypes import PrototypeSet
from protoflow.scenarios import desk8_spec, prepare

TWO = np.array([[0.0, 0.0], [10.0, 10.0]])


# -- hit rate ------------------------------------------------------------------

def test_hit_rate_examples():
    z = np.array([[0.1, 0], [9, 9], [10, 10], [0, 0]])
    assert class_hit_rate(z, [1, 1, 2, 2], TWO) == 50.0
    assert class_hit_rate(TWO, [1, 2], TWO) == 100.0
    assert class_hit_rate(np.random.default_rng(0).normal(0, 5, (9, 2)), [1] * 9, TWO[:1]) == 100.0


def test_hit_rate_ties_go_to_lowest_index():
    assert class_hit_rate(np.array([[5.0, 5.0]]), [1], TWO) == 100.0


def test_hit_rate_needs_assignments():
    pool = ClassPool.from_arrays([TWO])
    protos = PrototypeSet({0: TWO}, 2)
    with pytest.raises(DataError):
        hit_rate(pool, {}, protos)
    with pytest.raises(DataError):
        class_hit_rate(TWO, None, TWO)
    with pytest.raises(DataError):
        class_hit_rate(TWO, [1], TWO)


def test_hit_rate_average():
    pool = ClassPool.from_arrays([TWO, TWO])
    protos = PrototypeSet({0: TWO, 1: TWO}, 2)
    per_class, avg = hit_rate(pool, {0: [1, 2], 1: [2, 2]}, protos)
    assert per_class == {0: 100.0, 1: 50.0} and avg == 75.0


# -- coverage ------------------------------------------------------------------

def test_coverage_examples():
    assert coverage(TWO, TWO) == 1.0
    centers = np.arange(20.0).reshape(10, 2) * 10
    assert coverage(np.zeros((5, 2)), centers) == pytest.approx(0.1)
    assert coverage(np.array([[0, 0], [0.1, 0], [10, 10]]), TWO) == 1.0


@settings(max_examples=100, deadline=None)
@given(st.integers(1, 8), st.integers(0, 2**32 - 1))
def test_coverage_bounds_hit_rate(K, seed):
    rng = np.random.default_rng(seed)
    centers = rng.normal(0, 3, (K, 2))
    z = rng.normal(0, 3, (K, 2))
    assigned = np.arange(K) + 1
    hits = class_hit_rate(z, assigned, centers)
    assert coverage(z, centers) >= hits / 100 - 1e-12
    assert 0 <= coverage(z, centers) <= 1


# -- representativeness ----------------------------------------------------------

def test_representativeness_examples():
    real = np.random.default_rng(0).standard_normal((20, 2))
    assert representativeness(real[:5], real, k_nn=1) == 1.0
    assert representativeness(np.zeros((1, 2)), np.array([[1.0, 0], [0, 1.0]]), k_nn=2) == 0.5


def test_representativeness_clamps_k():
    real = np.array([[3.0, 4.0]])
    assert representativeness(np.zeros((1, 2)), real, k_nn=50) == pytest.approx(1 / 6)


def test_representativeness_empty_pool():
    with pytest.raises(DataError):
        representativeness(np.zeros((1, 2)), np.empty((0, 2)))


@given(st.integers(0, 2**32 - 1))
def test_representativeness_range(seed):
    rng = np.random.default_rng(seed)
    score = representativeness(rng.normal(0, 10, (4, 3)), rng.normal(0, 1, (30, 3)), 5)
    assert 0 < score <= 1


# -- moments -------------------------------------------------------------------

def test_moment_error_degenerate():
    spec = MixtureSpec.build([[((1.0, 2.0), 0.0, 1.0)]])
    assert moment_error(np.tile([1.0, 2.0], (5, 1)), spec) == (0.0, 0.0)
    wide = MixtureSpec.build([[((1.0, 2.0), 0.5, 1.0)]])
    mean_err, cov_err = moment_error(np.tile([1.0, 2.0], (5, 1)), wide)
    assert mean_err == 0.0
    assert cov_err == pytest.approx(np.linalg.norm(0.25 * np.eye(2)))


def test_moment_error_shift():
    z = np.array([[1.0, 1.0], [-1.0, -1.0], [1.0, -1.0], [-1.0, 1.0]])
    spec = MixtureSpec.build([[((1.0, 0.0), 1.0, 1.0)]])
    mean_err, cov_err = moment_error(z, spec)
    assert mean_err == pytest.approx(1.0)
    assert cov_err == pytest.approx(0.0, abs=1e-12)


def test_moment_error_monte_carlo():
    spec = MixtureSpec.build([[((0.0, 0.0), 1.0, 1.0)]])
    z = sample_mixture_dataset(spec, 10_000, seed=0)[0]
    assert max(moment_error(z, spec)) < 0.05


def test_moment_error_needs_two():
    with pytest.raises(DataError):
        moment_error(np.zeros((1, 2)), MixtureSpec.build([[((0.0, 0.0), 1.0, 1.0)]]))


# -- probe ---------------------------------------------------------------------

def separable(seed, n=40):
    rng = np.random.default_rng(seed)
    return ClassPool.from_arrays([rng.normal(-5, 0.5, (n, 2)), rng.normal(5, 0.5, (n, 2))])


def test_probe_separable():
    report = probe_eval(separable(0), separable(1), seeds=5)
    assert report.accuracies == [1.0] * 5
    assert report.std == 0.0 and report.seeds == 5


def test_probe_single_class_warns():
    train = ClassPool({0: np.random.default_rng(0).standard_normal((10, 2))}, 2, 2)
    test = ClassPool({0: np.random.default_rng(1).standard_normal((10, 2))}, 2, 2)
    with pytest.warns(RuntimeWarning, match="single class"):
        report = probe_eval(train, test, seeds=2)
    assert report.mean == 1.0


def test_probe_deterministic_per_seed():
    rng = np.random.default_rng(0)
    train = ClassPool.from_arrays([rng.normal(0, 1, (30, 3)), rng.normal(0.5, 1, (30, 3))])
    a = probe_eval(train, train, seeds=3)
    b = probe_eval(train, train, seeds=3)
    assert a.accuracies == b.accuracies
    assert all(0 <= x <= 1 for x in a.accuracies)


# -- NFE -------------------------------------------------------------------------

def record(nfe, method="euler", cfg=False):
    z = np.zeros(2)
    return TrajectoryRecord(0, 1, z, z, np.zeros(1), z[:1], z[:1], z[:1], z[:1].astype(int),
                            nfe, cfg, method)


@pytest.mark.parametrize("steps, substeps, method, cfg, expected", [
    (48, 4, "euler", False, 192),
    (8, 4, "euler", False, 32),
    (4, 4, "heun", False, 32),
    (48, 4, "euler", True, 384),
    (48, 4, "heun", False, 384),
])
def test_closed_form(steps, substeps, method, cfg, expected):
    assert closed_form_nfe(steps, substeps, method, cfg) == expected
    assert SolverConfig(steps, substeps, method).expected_nfe(cfg) == expected
    rep = nfe_report([record(expected, method, cfg)] * 3, steps, substeps)
    assert rep.total == 3 * expected and rep.expected_per_sample == expected


def test_nfe_mismatch():
    with pytest.raises(AccountingError):
        nfe_report([record(191)], 48, 4)
    with pytest.raises(EmptyInputError):
        nfe_report([], 48, 4)


# -- reports -------------------------------------------------------------------

def test_coverage_csv(tmp_path):
    pool = ClassPool.from_arrays([TWO, TWO + 1])
    protos = PrototypeSet({0: TWO, 1: TWO + 1}, 2)
    spec = MixtureSpec.build([[((5.0, 5.0), 1.0, 1)], [((6.0, 6.0), 1.0, 1)]])
    rep = coverage_report("pgfm", pool, {0: [1, 2], 1: [2, 1]}, protos, pool, 1, pool, spec, 8)
    write_coverage_csv(rep, tmp_path / "c.csv")
    rows = list(csv.reader(open(tmp_path / "c.csv")))
    assert rows[0] == ["class", "hit_rate", "coverage", "representativeness", "mean_error", "cov_error"]
    assert [r[0] for r in rows[1:]] == ["0", "1", "average"]
    assert float(rows[3][1]) == 50.0
    assert rep.summary()["total_nfe"] == 8


# -- statistical baseline ----------------------------------------------------------

def test_unguided_hit_rate_near_chance():
    spec = desk8_spec()
    rates = []
    for seed in range(20):
        ex = prepare(spec, seed)
        rates.append(ex.hit_rate(ex.synthesize(seed=seed, guided=False)))
    assert abs(np.mean(rates) - 100 / 8) <= 10
