import math

import numpy as np
import pytest
from hypothesis import given, strategies as st

from mlmcmc.hierarchy import (BayesianProblem, HierarchyFactory, Interpolation, check_hierarchy, interpolate,
                              log_posterior)
from mlmcmc.models import GaussianHierarchy, GaussianLevelProblem
from mlmcmc.probability import GaussianDensity, GaussianRandomWalk


class BoxPrior(BayesianProblem):
    """Uniform prior on [-1, 1]^d times a Gaussian likelihood."""

    def __init__(self, d=2, flat=False):
        self.dim = d
        self.qoi_dim = 1
        self.flat = flat

    def log_prior(self, theta):
        return 0.0 if np.all(np.abs(theta) <= 1.0) else -math.inf

    def log_likelihood(self, theta):
        if self.flat:
            return 3.0
        return -0.5 * float(np.sum((theta - 0.5) ** 2))

    def qoi(self, theta):
        return np.array([float(np.sum(theta))])


def test_constant_likelihood_gives_prior_plus_constant():
    prior = GaussianDensity(np.zeros(2), 1.0)

    class Flat(BoxPrior):
        def log_prior(self, theta):
            return prior.logpdf(theta)

        def log_likelihood(self, theta):
            return 7.0

    p = Flat(2)
    for th in ([0.0, 0.0], [1.0, -2.0], [3.0, 0.5]):
        assert log_posterior(p, th) == pytest.approx(prior.logpdf(np.array(th)) + 7.0)


def test_conjugate_product_matches_hand_computation():
    # prior N(0, 2), one observation y = 1 with noise variance 0.5
    prior = GaussianDensity(np.zeros(1), 2.0)
    noise = GaussianDensity(np.zeros(1), 0.5)
    p = GaussianLevelProblem(prior, np.array([1.0]), noise)
    for th in (-1.0, 0.0, 1.0):
        hand = (-0.5 * th**2 / 2.0 - 0.5 * math.log(2 * math.pi * 2.0)
                - 0.5 * (1.0 - th) ** 2 / 0.5 - 0.5 * math.log(2 * math.pi * 0.5))
        assert log_posterior(p, [th]) == pytest.approx(hand, rel=1e-13)


def test_conjugate_posterior_closed_form():
    prior = GaussianDensity(np.zeros(1), 2.0)
    p = GaussianLevelProblem(prior, np.array([1.0]), GaussianDensity(np.zeros(1), 0.5))
    post = p.posterior()
    # precision 1/2 + 2 = 2.5; mean = (1 * 2) / 2.5
    assert post.cov[0, 0] == pytest.approx(1 / 2.5)
    assert post.mean[0] == pytest.approx(0.8)
    # the unnormalised density differs from the posterior by a constant
    diffs = [log_posterior(p, [t]) - post.logpdf(np.array([t])) for t in (-1.0, 0.2, 2.0)]
    assert np.ptp(diffs) < 1e-12


def test_outside_support_is_minus_infinity():
    p = BoxPrior()
    assert log_posterior(p, [2.0, 0.0]) == -math.inf
    assert math.isfinite(log_posterior(p, [0.5, 0.5]))


def test_nan_density_maps_to_minus_infinity():
    class Broken(BoxPrior):
        def log_likelihood(self, theta):
            return math.nan

    assert log_posterior(Broken(), [0.0, 0.0]) == -math.inf


def test_log_posterior_dimension_check():
    with pytest.raises(ValueError):
        log_posterior(BoxPrior(2), [0.0])


# --- interpolation ------------------------------------------------------------


def test_identity_interpolation_for_equal_dimensions():
    np.testing.assert_array_equal(interpolate([1.0, 2.0], [], Interpolation(2, 2)), [1.0, 2.0])


def test_concatenation():
    np.testing.assert_array_equal(interpolate([1.0, 2.0], [3.0], Interpolation(2, 3)), [1.0, 2.0, 3.0])


@pytest.mark.parametrize("coarse,extra", [([1.0], [3.0]), ([1.0, 2.0], [3.0, 4.0]), ([1.0, 2.0], [])])
def test_dimension_mismatch(coarse, extra):
    with pytest.raises(ValueError):
        interpolate(coarse, extra, Interpolation(2, 3))


def test_shrinking_dimension_rejected():
    with pytest.raises(ValueError):
        Interpolation(3, 2)


@given(st.integers(0, 5), st.integers(0, 5), st.data())
def test_split_combine_round_trip(cd, extra, data):
    it = Interpolation(cd, cd + extra)
    fine = np.array(data.draw(st.lists(st.floats(-1e6, 1e6), min_size=cd + extra, max_size=cd + extra)))
    c, f = it.split(fine)
    np.testing.assert_array_equal(it.combine(c, f), fine)
    c2 = np.array(data.draw(st.lists(st.floats(-1e6, 1e6), min_size=cd, max_size=cd)))
    f2 = np.array(data.draw(st.lists(st.floats(-1e6, 1e6), min_size=extra, max_size=extra)))
    a, b = it.split(it.combine(c2, f2))
    np.testing.assert_array_equal(a, c2)
    np.testing.assert_array_equal(b, f2)


# --- factory checks ---------------------------------------------------------------


class _Growing(HierarchyFactory):
    def __init__(self, dims, start=0.0):
        self.dims = dims
        self.start = start

    def sampling_problem(self, level, comm=None):
        return BoxPrior(self.dims[level])

    def finest_index(self):
        return len(self.dims) - 1

    def proposal(self, level, problem):
        return GaussianRandomWalk(0.1, problem.dim)

    def starting_point(self, level):
        return np.full(self.dims[level], self.start)


def test_check_hierarchy_accepts_growing_dimensions():
    f = _Growing([1, 2, 4])
    check_hierarchy(f)
    assert f.interpolation(2).extra_dim == 2
    assert f.num_levels == 3


def test_check_hierarchy_rejects_shrinking_dimensions():
    with pytest.raises(ValueError, match="decreases"):
        check_hierarchy(_Growing([2, 1]))


def test_check_hierarchy_rejects_zero_density_start():
    with pytest.raises(ValueError, match="zero density"):
        check_hierarchy(_Growing([1, 1], start=5.0))


def test_gaussian_factory_passes_checks():
    check_hierarchy(GaussianHierarchy.converging(3, [1.0, -0.5]))
