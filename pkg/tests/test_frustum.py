import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from echofield.frustum import (
    GaussianRadii,
    SegmentBounds,
    base_radii,
    build_covariance,
    mean_distance,
    perpendicular_variance,
    ray_variance,
)
from echofield.geometry import Ray

from conftest import random_pose


def _seg(mu, delta):
    return SegmentBounds(t0=mu - delta, t1=mu + delta)


def _ray_along(direction, lateral, depth, origin=(0, 0, 0)):
    return Ray(origin=np.array(origin, float), direction=np.array(direction, float),
               lateral_axis=np.array(lateral, float), depth_axis=np.array(depth, float),
               t_min=0.0, t_max=10.0)


def sample_frustum_uniform(mu, delta, r_lat, r_dep, n, rng):
    """Independent oracle: uniform points in the elliptical cone frustum.

    Cross-section area grows as t^2, so the axial density is t^2 on
    [t0, t1]; inverse-CDF sampling gives t, then a uniform point in the
    ellipse with semi-axes (r_lat t, r_dep t).
    Returns (t, lateral offsets, depth offsets).
    """
    t0, t1 = mu - delta, mu + delta
    u = rng.random(n)
    t = np.cbrt(t0**3 + u * (t1**3 - t0**3))
    rho = np.sqrt(rng.random(n))
    phi = rng.uniform(0, 2 * np.pi, n)
    return t, r_lat * t * rho * np.cos(phi), r_dep * t * rho * np.sin(phi)


def moment_standard_errors(samples):
    """Standard errors of the sample mean and sample variance."""
    n = len(samples)
    se_mean = samples.std(ddof=1) / np.sqrt(n)
    c = samples - samples.mean()
    m2 = np.mean(c**2)
    m4 = np.mean(c**4)
    se_var = np.sqrt(max(m4 - m2**2, 0.0) / n)
    return se_mean, se_var


class TestSegmentBounds:
    def test_midpoint_and_halfwidth(self):
        seg = SegmentBounds(1.0, 3.0)
        assert seg.mu == 2.0
        assert seg.delta == 1.0

    def test_rejects_inverted(self):
        with pytest.raises(ValueError):
            SegmentBounds(3.0, 1.0)

    def test_rejects_apex_straddling(self):
        with pytest.raises(ValueError):
            SegmentBounds(-2.0, 1.0)


class TestBaseRadii:
    def test_reference_spacing(self):
        r = base_radii(0.3, 0.3)
        assert r.r_lat == pytest.approx(0.173205, abs=1e-6)

    def test_downsampled_spacing(self):
        r = base_radii(0.3, 0.6)
        assert r.r_dep == pytest.approx(0.346410, abs=1e-6)

    def test_unit_inversion(self):
        r = base_radii(np.sqrt(12) / 2, np.sqrt(12) / 2)
        assert r.r_lat == pytest.approx(1.0, abs=1e-12)

    def test_rejects_nonpositive(self):
        with pytest.raises(ValueError):
            base_radii(0.0, 1.0)


class TestMeanDistance:
    def test_narrow_segment_is_midpoint(self):
        assert mean_distance(_seg(1.0, 1e-9)) == pytest.approx(1.0, abs=1e-12)

    def test_unit_halfwidth(self):
        assert mean_distance(_seg(2.0, 1.0)) == pytest.approx(2 + 4 / 13, abs=1e-9)

    def test_far_field_barely_shifts(self):
        assert mean_distance(_seg(10.0, 0.1)) == pytest.approx(10.000666, abs=1e-6)

    def test_never_below_midpoint(self, rng):
        for _ in range(50):
            mu = rng.uniform(0.5, 50)
            delta = rng.uniform(1e-6, 0.9) * mu
            assert mean_distance(_seg(mu, delta)) >= mu


class TestRayVariance:
    def test_unit_halfwidth(self):
        expected = 1 / 3 - (4 / 15) * (47 / 169)
        assert ray_variance(_seg(2.0, 1.0)) == pytest.approx(expected, abs=1e-9)
        assert expected == pytest.approx(0.259172, abs=1e-6)

    def test_degenerate_segment(self):
        assert ray_variance(_seg(5.0, 1e-9)) == pytest.approx(0.0, abs=1e-12)

    def test_far_field_asymptote(self):
        val = ray_variance(_seg(100.0, 1.0))
        approx = 1 / 3 - (4 / 15) * (12 / 9) / 100.0**2
        assert val == pytest.approx(approx, abs=1e-5)

    @given(mu=st.floats(0.5, 100.0), ratio=st.floats(1e-3, 0.9))
    @settings(max_examples=100, deadline=None)
    def test_bounded_by_uniform_variance(self, mu, ratio):
        delta = mu * ratio
        v = ray_variance(_seg(mu, delta))
        assert 0 < v <= delta**2 / 3 + 1e-15


class TestPerpendicularVariance:
    def test_unit_radius(self):
        expected = 1 + 5 / 12 - 4 / 195
        assert perpendicular_variance(_seg(2.0, 1.0), 1.0) == pytest.approx(
            expected, abs=1e-9)
        assert expected == pytest.approx(1.396154, abs=1e-6)

    def test_quadratic_radius_scaling(self):
        assert perpendicular_variance(_seg(2.0, 1.0), 0.1) == pytest.approx(
            0.01 * perpendicular_variance(_seg(2.0, 1.0), 1.0), rel=1e-12)

    def test_zero_width_limit(self):
        v = perpendicular_variance(_seg(10.0, 1e-10), 0.37)
        assert v == pytest.approx(0.37**2 * 25.0, rel=1e-8)

    @given(mu=st.floats(0.5, 50.0), ratio=st.floats(1e-3, 0.9),
           r=st.floats(1e-3, 5.0), c=st.floats(0.1, 10.0))
    @settings(max_examples=100, deadline=None)
    def test_exact_quadratic_scaling(self, mu, ratio, r, c):
        seg = _seg(mu, mu * ratio)
        assert perpendicular_variance(seg, c * r) == pytest.approx(
            c**2 * perpendicular_variance(seg, r), rel=1e-12)


class TestBuildCovariance:
    def test_axis_aligned_diagonal(self):
        ray = _ray_along((1, 0, 0), (0, 1, 0), (0, 0, 1))
        g = build_covariance(_seg(2.0, 1.0), GaussianRadii(1.0, 1.0), ray)
        np.testing.assert_allclose(
            g.covariance, np.diag([0.259172, 1.396154, 1.396154]), atol=1e-6)
        np.testing.assert_allclose(g.mean_point, [2 + 4 / 13, 0, 0], atol=1e-12)

    def test_anisotropic_axis_ratio(self):
        ray = _ray_along((1, 0, 0), (0, 1, 0), (0, 0, 1))
        g = build_covariance(_seg(2.0, 1.0), GaussianRadii(0.8, 0.2), ray)
        ratio = g.covariance[1, 1] / g.covariance[2, 2]
        assert ratio == pytest.approx((0.8 / 0.2) ** 2, rel=1e-10)

    def test_rotation_conjugates_covariance(self, rng):
        seg = _seg(3.0, 0.8)
        radii = GaussianRadii(0.5, 1.5)
        base = build_covariance(seg, radii, _ray_along((1, 0, 0), (0, 1, 0), (0, 0, 1)))
        for _ in range(5):
            rot = random_pose(rng).rotation
            ray = _ray_along(rot @ [1, 0, 0], rot @ [0, 1, 0], rot @ [0, 0, 1])
            g = build_covariance(seg, radii, ray)
            np.testing.assert_allclose(
                g.covariance, rot @ base.covariance @ rot.T, atol=1e-10)

    def test_covariance_symmetric_psd_with_stored_spectrum(self, rng):
        for _ in range(10):
            rot = random_pose(rng).rotation
            ray = _ray_along(rot @ [1, 0, 0], rot @ [0, 1, 0], rot @ [0, 0, 1])
            g = build_covariance(_seg(4.0, 1.5), GaussianRadii(0.3, 0.9), ray)
            np.testing.assert_allclose(g.covariance, g.covariance.T, atol=1e-12)
            eig = np.sort(np.linalg.eigvalsh(g.covariance))
            assert eig[0] >= -1e-12
            np.testing.assert_allclose(eig, np.sort(g.variances), atol=1e-9)
            assert np.trace(g.covariance) == pytest.approx(sum(g.variances), abs=1e-10)

    def test_rejects_non_orthonormal_frame(self):
        ray = _ray_along((1, 0, 0), (0, 1, 0), (0, 0, 1))
        object.__setattr__(ray, "lateral_axis", np.array([0.0, 0.9, 0.0]))
        with pytest.raises(ValueError, match="orthonormal"):
            build_covariance(_seg(2.0, 1.0), GaussianRadii(1.0, 1.0), ray)


class TestMonteCarloOracle:
    """The frustum moments must match uniform sampling of the actual solid."""

    def test_moments_match_sampling(self, rng):
        n = 200_000
        for _ in range(5):
            mu = rng.uniform(1.0, 30.0)
            delta = mu * rng.uniform(0.05, 0.9)
            r_lat = rng.uniform(0.05, 1.5)
            r_dep = rng.uniform(0.05, 1.5)
            t, lat, dep = sample_frustum_uniform(mu, delta, r_lat, r_dep, n, rng)
            seg = _seg(mu, delta)

            se_mean, se_var = moment_standard_errors(t)
            assert abs(t.mean() - mean_distance(seg)) <= 3 * se_mean
            assert abs(t.var(ddof=1) - ray_variance(seg)) <= 3 * se_var
            for samples, r_axis in ((lat, r_lat), (dep, r_dep)):
                _, se = moment_standard_errors(samples)
                assert abs(samples.var(ddof=1)
                           - perpendicular_variance(seg, r_axis)) <= 3 * se
