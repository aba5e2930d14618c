import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from ctpanel.ctsem.kalman import SubjectSeries, kalman_loglik
from ctpanel.ctsem.model import CtParams
from ctpanel.errors import NumericalError

from oracles import joint_loglik, random_params, random_series


def scalar_params(**kw):
    base = dict(drift=[[-0.5]], diffusion_chol=[[1.0]], predictor_effects=[[0.0]], loadings=[[1.0]],
                manifest_intercept=[0.0], manifest_error_var=[[1.0]], init_mean=[0.0], init_cov=[[1.0]])
    base.update(kw)
    return CtParams(**base)


def test_empty_series():
    res = kalman_loglik(scalar_params(), SubjectSeries(np.zeros(0), np.zeros((0, 1)), np.zeros((0, 1))))
    assert res.loglik == 0.0


def test_single_observation_density():
    res = kalman_loglik(scalar_params(), SubjectSeries([0.0], [[0.0]], [[0.0]]))
    assert res.loglik == pytest.approx(-0.5 * math.log(2 * math.pi * 2), abs=1e-12)
    assert res.loglik == pytest.approx(-1.26551, abs=1e-5)


def test_missing_manifest_skips_update():
    res = kalman_loglik(scalar_params(), SubjectSeries([0.0, 1.0], [[0.0], [0.0]], [[np.nan], [np.nan]]))
    assert res.loglik == 0.0
    assert res.covs[0, 0, 0] == pytest.approx(1.0)


def test_impulse_shifts_mean_before_update():
    p = scalar_params(predictor_effects=[[2.0]])
    res = kalman_loglik(p, SubjectSeries([0.0], [[1.5]], [[np.nan]]))
    assert res.means[0, 0] == pytest.approx(3.0)


def test_times_must_increase():
    with pytest.raises(ValueError):
        SubjectSeries([0.0, 0.0], [[0], [0]], [[0], [0]])


def test_bad_innovation_covariance_names_slice():
    p = scalar_params(manifest_error_var=[[-5.0]])
    with pytest.raises(NumericalError, match="slice 0"):
        kalman_loglik(p, SubjectSeries([0.0], [[0.0]], [[1.0]]))


@given(st.integers(0, 2**32 - 1), st.integers(1, 3), st.integers(1, 2), st.integers(1, 2), st.integers(1, 5),
       st.booleans())
def test_filter_matches_joint_gaussian(seed, n, m, p, T, stationary):
    rng = np.random.default_rng(seed)
    params = random_params(rng, n, m, p, stationary)
    times, X, y = random_series(rng, T, m, p)
    got = kalman_loglik(params, SubjectSeries(times, X, y)).loglik
    assert got == pytest.approx(joint_loglik(params, times, X, y), abs=1e-6)


@given(st.integers(0, 2**32 - 1))
def test_filtered_covariances_symmetric_psd(seed):
    rng = np.random.default_rng(seed)
    params = random_params(rng, 3, 2, 2)
    times, X, y = random_series(rng, 30, 2, 2)
    res = kalman_loglik(params, SubjectSeries(times, X, y))
    for P in res.covs:
        assert np.array_equal(P, P.T)
        assert np.linalg.eigvalsh(P).min() >= 0.0


def test_nan_predictor_is_zero_impulse():
    rng = np.random.default_rng(1)
    params = random_params(rng, 2, 1, 2)
    times, X, y = random_series(rng, 6, 1, 2)
    X0 = X.copy()
    X0[2, 1] = 0.0
    X[2, 1] = np.nan
    a = kalman_loglik(params, SubjectSeries(times, X, y)).loglik
    b = kalman_loglik(params, SubjectSeries(times, X0, y)).loglik
    assert a == b
