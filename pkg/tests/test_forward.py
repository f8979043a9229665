import math

import numpy as np
import pytest
from scipy.integrate import quad

from decaymap import (
    InvalidInputError,
    LidarRay,
    Ray2,
    RayOutcome,
    ScanSet,
    SensorLimits,
    SpectralMap,
    path_integral,
    prob_sub,
    prob_super,
    ray_log_likelihood,
    return_density,
    scan_log_likelihood,
    survival,
)
from decaymap.spectral import decay_rate_on_ray

from conftest import random_interior_ray, random_map


def quad_integral(m, ray, r):
    val, _ = quad(
        lambda t: decay_rate_on_ray(m, ray, t), 0.0, r,
        epsabs=1e-12, epsrel=1e-12, limit=200,
    )
    return val


class TestPathIntegral:
    def test_zero_at_r_zero(self, rng):
        m = random_map(rng)
        assert path_integral(m, random_interior_ray(rng), 0.0) == 0.0

    def test_constant_field(self, rng):
        c = 0.7
        m = SpectralMap([[c]], 10.0, 10.0)
        ray = random_interior_ray(rng)
        assert path_integral(m, ray, 1.5) == pytest.approx(c * c * 1.5, rel=1e-12)

    def test_matches_quadrature(self, rng):
        for k in range(15):
            m = random_map(rng, L=3, M=3)
            if k % 3 == 0:
                # axis-aligned rays force the vanishing-frequency branch
                theta = rng.choice([0.0, np.pi / 2, np.pi, -np.pi / 2])
                ray = Ray2.from_angle(rng.uniform(2, 8, size=2), theta)
            else:
                ray = random_interior_ray(rng)
            r = rng.uniform(0.1, 1.8)
            S = path_integral(m, ray, r)
            assert S == pytest.approx(quad_integral(m, ray, r), rel=1e-8, abs=1e-10)

    def test_additivity(self, rng):
        for _ in range(5):
            m = random_map(rng)
            origin = rng.uniform(3, 7, size=2)
            ray = Ray2.from_angle(origin, rng.uniform(0, 2 * np.pi))
            r1, r2 = rng.uniform(0.1, 1.2, size=2)
            first = path_integral(m, ray, r1)
            shifted = Ray2(ray.point_at(r1), ray.direction)
            second = path_integral(m, shifted, r2)
            total = path_integral(m, ray, r1 + r2)
            assert total == pytest.approx(first + second, rel=1e-10, abs=1e-12)

    def test_branch_continuity(self, rng):
        # Diagonal ray on a square extent zeroes the frequency of P = Q pairs.
        m = random_map(rng, L=3, M=3)
        origin = np.array([5.0, 5.0])
        base = Ray2(origin, np.array([1.0, -1.0]) / math.sqrt(2.0))
        S0 = path_integral(m, base, 1.0)
        for eps in (1e-3, 1e-5, 1e-7):
            rot = Ray2.from_angle(origin, math.atan2(-1.0, 1.0) + eps)
            S_eps = path_integral(m, rot, 1.0)
            assert abs(S_eps - S0) < 10.0 * eps + 1e-12

    def test_negative_r_rejected(self, rng):
        with pytest.raises(InvalidInputError):
            path_integral(random_map(rng), random_interior_ray(rng), -1.0)


class TestSurvival:
    def test_boundary_condition(self, rng):
        assert survival(random_map(rng), random_interior_ray(rng), 0.0) == 1.0

    def test_zero_map(self, rng):
        m = SpectralMap(np.zeros((1, 1)), 10.0, 10.0)
        assert survival(m, random_interior_ray(rng), 3.0) == 1.0

    def test_constant_closed_form(self, rng):
        c = 0.9
        m = SpectralMap([[c]], 10.0, 10.0)
        assert survival(m, random_interior_ray(rng), 2.0) == pytest.approx(
            math.exp(-2.0 * c * c), rel=1e-12
        )

    def test_monotone_nonincreasing(self, rng):
        m = random_map(rng)
        ray = random_interior_ray(rng)
        rs = np.linspace(0.0, 2.0, 60)
        vals = [survival(m, ray, r) for r in rs]
        assert all(b <= a + 1e-14 for a, b in zip(vals, vals[1:]))


class TestReturnDensity:
    LIMITS = SensorLimits(0.04, 80.0)

    def test_constant_exponential(self, rng):
        c = 0.8
        m = SpectralMap([[c]], 10.0, 10.0)
        r = 1.3
        expected = c * c * math.exp(-c * c * r)
        assert return_density(m, random_interior_ray(rng), r, self.LIMITS) == pytest.approx(
            expected, rel=1e-12
        )

    def test_zero_map(self, rng):
        m = SpectralMap(np.zeros((2, 2)), 10.0, 10.0)
        assert return_density(m, random_interior_ray(rng), 1.0, self.LIMITS) == 0.0

    def test_density_is_negative_survival_slope(self, rng):
        m = random_map(rng)
        ray = random_interior_ray(rng)
        h = 1e-5
        for r in rng.uniform(0.5, 1.5, size=5):
            fd = (survival(m, ray, r - h) - survival(m, ray, r + h)) / (2 * h)
            p = return_density(m, ray, r, self.LIMITS)
            assert p == pytest.approx(fd, rel=1e-6, abs=1e-10)

    def test_out_of_limits_rejected(self, rng):
        m = random_map(rng)
        with pytest.raises(InvalidInputError):
            return_density(m, random_interior_ray(rng), 0.01, self.LIMITS)


class TestNoReturnProbabilities:
    def test_zero_map(self, rng):
        m = SpectralMap(np.zeros((1, 1)), 10.0, 10.0)
        limits = SensorLimits(0.04, 5.0)
        ray = random_interior_ray(rng)
        assert prob_sub(m, ray, limits) == 0.0
        assert prob_super(m, ray, limits) == 1.0

    def test_constant_super(self, rng):
        c = 0.6
        m = SpectralMap([[c]], 10.0, 10.0)
        limits = SensorLimits(0.04, 4.0)
        assert prob_super(m, random_interior_ray(rng), limits) == pytest.approx(
            math.exp(-c * c * 4.0), rel=1e-12
        )

    def test_mixed_density_normalizes(self, rng):
        for _ in range(5):
            m = random_map(rng)
            origin = rng.uniform(4, 6, size=2)
            ray = Ray2.from_angle(origin, rng.uniform(0, 2 * np.pi))
            limits = SensorLimits(0.3, 3.0)
            integral, _ = quad(
                lambda r: return_density(m, ray, r, limits),
                limits.r_min, limits.r_max, epsabs=1e-10, epsrel=1e-10, limit=200,
            )
            total = prob_sub(m, ray, limits) + integral + prob_super(m, ray, limits)
            assert total == pytest.approx(1.0, abs=1e-6)


class TestRayLogLikelihood:
    def test_zero_map_super(self, rng):
        m = SpectralMap(np.zeros((1, 1)), 10.0, 10.0)
        limits = SensorLimits(0.04, 5.0)
        z = LidarRay(random_interior_ray(rng), RayOutcome.super_())
        assert ray_log_likelihood(m, z, limits) == 0.0

    def test_constant_return_closed_form(self, rng):
        c = 0.75
        m = SpectralMap([[c]], 10.0, 10.0)
        limits = SensorLimits(0.04, 80.0)
        r = 1.9
        z = LidarRay(random_interior_ray(rng), RayOutcome.returned(r))
        assert ray_log_likelihood(m, z, limits) == pytest.approx(
            2.0 * math.log(c) - c * c * r, rel=1e-12
        )

    def test_exp_matches_direct_density(self, rng):
        m = random_map(rng)
        limits = SensorLimits(0.5, 3.0)
        origin = rng.uniform(4, 6, size=2)
        ray = Ray2.from_angle(origin, rng.uniform(0, 2 * np.pi))
        ll_sub = ray_log_likelihood(m, LidarRay(ray, RayOutcome.sub()), limits)
        assert math.exp(ll_sub) == pytest.approx(prob_sub(m, ray, limits), rel=1e-9)
        ll_sup = ray_log_likelihood(m, LidarRay(ray, RayOutcome.super_()), limits)
        assert math.exp(ll_sup) == pytest.approx(prob_super(m, ray, limits), rel=1e-9)
        r = 1.2
        ll_ret = ray_log_likelihood(m, LidarRay(ray, RayOutcome.returned(r)), limits)
        assert math.exp(ll_ret) == pytest.approx(
            return_density(m, ray, r, limits), rel=1e-9, abs=1e-300
        )

    def test_never_minus_infinity(self, rng):
        m = SpectralMap(np.zeros((1, 1)), 10.0, 10.0)
        limits = SensorLimits(0.5, 3.0)
        ray = random_interior_ray(rng)
        for outcome in (RayOutcome.sub(), RayOutcome.returned(1.0)):
            ll = ray_log_likelihood(m, LidarRay(ray, outcome), limits)
            assert math.isfinite(ll)


class TestScanLogLikelihood:
    def test_empty_scan(self, rng):
        m = random_map(rng)
        assert scan_log_likelihood(m, ScanSet((), SensorLimits())) == 0.0

    def test_two_identical_rays(self, rng):
        m = random_map(rng)
        limits = SensorLimits(0.04, 6.0)
        z = LidarRay(random_interior_ray(rng), RayOutcome.returned(1.1))
        single = scan_log_likelihood(m, ScanSet((z,), limits))
        double = scan_log_likelihood(m, ScanSet((z, z), limits))
        assert double == pytest.approx(2.0 * single, rel=1e-12)

    def test_sum_of_individual_terms(self, rng):
        m = random_map(rng)
        limits = SensorLimits(0.3, 4.0)
        rays = []
        for _ in range(50):
            origin = rng.uniform(4.2, 5.8, size=2)
            ray = Ray2.from_angle(origin, rng.uniform(0, 2 * np.pi))
            kind = rng.integers(0, 3)
            if kind == 0:
                rays.append(LidarRay(ray, RayOutcome.sub()))
            elif kind == 1:
                rays.append(LidarRay(ray, RayOutcome.returned(rng.uniform(0.4, 3.5))))
            else:
                rays.append(LidarRay(ray, RayOutcome.super_()))
        scans = ScanSet(tuple(rays), limits)
        total = scan_log_likelihood(m, scans)
        parts = sum(ray_log_likelihood(m, z, limits) for z in rays)
        assert total == pytest.approx(parts, rel=1e-12)

    def test_return_beyond_boundary_rejected(self, rng):
        m = random_map(rng)
        limits = SensorLimits(0.04, 80.0)
        ray = Ray2.from_angle((9.5, 5.0), 0.0)  # exits after 0.5 m
        scans = ScanSet((LidarRay(ray, RayOutcome.returned(2.0)),), limits)
        with pytest.raises(InvalidInputError):
            scan_log_likelihood(m, scans)

    def test_origin_outside_rejected(self, rng):
        m = random_map(rng)
        limits = SensorLimits(0.04, 80.0)
        ray = Ray2.from_angle((-1.0, 5.0), 0.0)
        scans = ScanSet((LidarRay(ray, RayOutcome.super_()),), limits)
        with pytest.raises(InvalidInputError):
            scan_log_likelihood(m, scans)


class TestTypes:
    def test_limits_validation(self):
        with pytest.raises(InvalidInputError):
            SensorLimits(5.0, 5.0)
        with pytest.raises(InvalidInputError):
            SensorLimits(-1.0, 5.0)
        with pytest.raises(InvalidInputError):
            SensorLimits(0.0, math.inf)

    def test_outcome_validation(self):
        with pytest.raises(InvalidInputError):
            RayOutcome("bogus")
        with pytest.raises(InvalidInputError):
            RayOutcome.returned(-2.0)

    def test_scanset_radius_invariant(self, rng):
        limits = SensorLimits(0.5, 2.0)
        z = LidarRay(random_interior_ray(rng), RayOutcome.returned(3.0))
        with pytest.raises(InvalidInputError):
            ScanSet((z,), limits)
