import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from protoflow.errors import (ConfigError, EmptyInputError, ParseError, SchemaError,
                              ShapeError)
from protoflow.latent_space import (EPS_STD, ClassPool, LatentCodec, MixtureSpec, Standardizer,
                                    codec_decode, fit_standardizer, load_dataset,
                                    sample_mixture_dataset, save_dataset, standardize)

finite = st.floats(-1e6, 1e6, allow_nan=False, allow_infinity=False)


def write(tmp_path, text, name="data.txt"):
    p = tmp_path / name
    p.write_text(text)
    return p


# -- file format ---------------------------------------------------------------

def test_load_single_row(tmp_path):
    pool = load_dataset(write(tmp_path, "#dim=2 classes=1\n0,1.0,2.0\n"))
    assert pool.counts() == {0: 1}
    np.testing.assert_array_equal(pool[0], [[1.0, 2.0]])


def test_arity_violation_names_line(tmp_path):
    with pytest.raises(ParseError) as err:
        load_dataset(write(tmp_path, "#dim=2 classes=1\n0,1.0\n"))
    assert err.value.line == 2
    assert "line 2" in str(err.value)


def test_two_classes_counted(tmp_path):
    rows = ["0,1,1", "1,2,2", "0,3,3", "1,4,4", "1,5,5"]
    pool = load_dataset(write(tmp_path, "#dim=2 classes=2\n" + "\n".join(rows) + "\n"))
    assert pool.counts() == {0: 2, 1: 3}
    np.testing.assert_array_equal(pool[0], [[1, 1], [3, 3]])
    np.testing.assert_array_equal(pool[1], [[2, 2], [4, 4], [5, 5]])


def test_unknown_label_is_schema_error(tmp_path):
    with pytest.raises(SchemaError):
        load_dataset(write(tmp_path, "#dim=1 classes=2\n2,0.5\n"))


def test_empty_file(tmp_path):
    with pytest.raises(EmptyInputError):
        load_dataset(write(tmp_path, ""))


def test_missing_header(tmp_path):
    with pytest.raises(ParseError):
        load_dataset(write(tmp_path, "0,1.0\n"))


def test_non_numeric_field(tmp_path):
    with pytest.raises(ParseError) as err:
        load_dataset(write(tmp_path, "#dim=1 classes=1\n0,1\n0,abc\n"))
    assert err.value.line == 3


@settings(max_examples=30, deadline=None)
@given(arrays(np.float64, (5, 3), elements=st.floats(-1e300, 1e300, allow_nan=False)))
def test_round_trip_is_bit_exact(tmp_path_factory, values):
    path = tmp_path_factory.mktemp("rt") / "pool.txt"
    pool = ClassPool.from_arrays({0: values[:2], 1: values[2:]})
    save_dataset(pool, path)
    back = load_dataset(path)
    for y in (0, 1):
        assert back[y].tobytes() == pool[y].tobytes()


def test_pool_is_read_only():
    pool = ClassPool.from_arrays([np.zeros((2, 2))])
    with pytest.raises(ValueError):
        pool[0][0, 0] = 1.0


def test_pool_rejects_mismatched_dims():
    with pytest.raises(ShapeError):
        ClassPool({0: np.zeros((2, 2)), 1: np.zeros((2, 3))}, 2, 2)


# -- mixtures ------------------------------------------------------------------

def test_zero_variance_component():
    spec = MixtureSpec.build([[((3.0, 3.0), 0.0, 1.0)]])
    pool = sample_mixture_dataset(spec, 7, seed=1)
    np.testing.assert_array_equal(pool[0], np.full((7, 2), 3.0))


def test_sampling_is_deterministic():
    spec = MixtureSpec.build([[((0, 0), 1.0, 1), ((5, 5), 0.3, 2)], [((1, -1), 0.5, 1)]])
    a = sample_mixture_dataset(spec, 50, seed=4)
    b = sample_mixture_dataset(spec, 50, seed=4)
    for y in (0, 1):
        assert a[y].tobytes() == b[y].tobytes()


def test_standard_normal_moments():
    spec = MixtureSpec.build([[((0.0, 0.0), 1.0, 1.0)]])
    z = sample_mixture_dataset(spec, 10_000, seed=0)[0]
    assert np.all(np.abs(z.mean(axis=0)) < 0.05)
    assert np.all(np.abs(z.var(axis=0) - 1.0) < 0.1)


def test_spec_without_components():
    with pytest.raises(ConfigError):
        MixtureSpec.build([[]])


def test_spec_weights_normalized():
    spec = MixtureSpec.build([[((0,), 1, 1), ((1,), 1, 3)]])
    np.testing.assert_allclose(spec.arrays(0)[2], [0.25, 0.75])


def test_spec_json_round_trip(tmp_path):
    spec = MixtureSpec.build([[((0, 1), 0.5, 1), ((2, 3), 0.0, 1)], [((4, 5), 1.5, 1)]])
    spec.save(tmp_path / "m.json")
    back = MixtureSpec.load(tmp_path / "m.json")
    for y in range(2):
        for a, b in zip(spec.arrays(y), back.arrays(y)):
            np.testing.assert_array_equal(a, b)


def test_spec_bad_json(tmp_path):
    with pytest.raises(ConfigError):
        MixtureSpec.load(write(tmp_path, "{not json", "m.json"))


def test_analytic_moments_two_points():
    spec = MixtureSpec.build([[((-1.0, 0.0), 0.0, 1), ((1.0, 0.0), 0.0, 1)]])
    mean, cov = spec.moments(0)
    np.testing.assert_allclose(mean, [0, 0])
    np.testing.assert_allclose(cov, [[1, 0], [0, 0]])


# -- standardization -------------------------------------------------------------

def test_symmetric_pair_floor():
    st_ = fit_standardizer(ClassPool.from_arrays([[[1.0, 0.0], [-1.0, 0.0]]]))
    np.testing.assert_array_equal(st_.mu, [0, 0])
    np.testing.assert_array_equal(st_.sigma, [1.0, EPS_STD])


def test_single_point():
    st_ = fit_standardizer(ClassPool.from_arrays([[[2.0, 3.0]]]))
    np.testing.assert_array_equal(st_.mu, [2, 3])
    np.testing.assert_array_equal(st_.sigma, [EPS_STD, EPS_STD])


def test_empty_pool():
    with pytest.raises(EmptyInputError):
        fit_standardizer(ClassPool({}, 2, 1))


def test_arithmetic_and_centering():
    s = Standardizer(np.array([1.0, 1.0]), np.array([2.0, 2.0]))
    np.testing.assert_array_equal(standardize(np.array([3.0, 5.0]), s), [1, 2])
    np.testing.assert_array_equal(standardize(s.mu, s), [0, 0])
    np.testing.assert_array_equal(standardize(np.array([1.0, 2.0]), s, "inverse"), [3, 5])


def test_dimension_mismatch():
    s = Standardizer(np.zeros(2), np.ones(2))
    with pytest.raises(ShapeError):
        standardize(np.zeros(3), s)


@settings(max_examples=60, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 30), st.integers(1, 4)), elements=finite),
       arrays(np.float64, 4, elements=finite))
def test_refit_after_standardizing(points, probe):
    pool = ClassPool.from_arrays([points])
    s = fit_standardizer(pool)
    assert np.all(s.sigma >= EPS_STD)
    refit = fit_standardizer(pool.map(s.forward))
    live = points.std(axis=0) > 1e-3 * (1 + np.abs(points).max())
    np.testing.assert_allclose(refit.mu[live], 0.0, atol=1e-9)
    np.testing.assert_allclose(refit.sigma[live], 1.0, atol=1e-9)
    z = probe[: points.shape[1]]
    np.testing.assert_allclose(s.inverse(s.forward(z)), z, rtol=1e-12,
                               atol=1e-9 * (1 + np.abs(s.mu).max()))


# -- codecs --------------------------------------------------------------------

def test_identity_decode():
    np.testing.assert_array_equal(codec_decode(np.array([1.0, 2.0]), LatentCodec()), [1, 2])
    np.testing.assert_array_equal(codec_decode(np.array([2.0, 4.0]), LatentCodec(s_vae=2.0)), [1, 2])


@pytest.mark.parametrize("s_vae", [0.0, -1.0])
def test_nonpositive_scale(s_vae):
    with pytest.raises(ConfigError):
        codec_decode(np.zeros(2), LatentCodec(s_vae=s_vae))


def test_affine_needs_full_rank():
    with pytest.raises(ConfigError):
        LatentCodec("affine", A=np.array([[1.0, 2.0], [2.0, 4.0]]))


@settings(max_examples=40, deadline=None)
@given(st.integers(0, 2**32 - 1), st.floats(0.1, 10.0))
def test_affine_round_trip(seed, s_vae):
    rng = np.random.default_rng(seed)
    Q, _ = np.linalg.qr(rng.standard_normal((3, 3)))
    codec = LatentCodec("affine", A=Q, b=rng.standard_normal(3), s_vae=s_vae)
    x = rng.standard_normal((10, 3)) * 5
    np.testing.assert_allclose(codec.decode(codec.encode(x)), x, atol=1e-6)


def test_tall_affine_round_trip_in_range():
    rng = np.random.default_rng(0)
    A = rng.standard_normal((5, 2))
    codec = LatentCodec("affine", A=A, b=np.ones(5))
    x = rng.standard_normal((4, 2)) @ A.T + 1.0
    np.testing.assert_allclose(codec.decode(codec.encode(x)), x, atol=1e-6)
