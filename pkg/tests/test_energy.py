import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from laguerre_flow.energy import (
    cell_cost,
    cstar_prime,
    cstar_second,
    cstar_value,
    from_config_key,
    no_potential,
    power_law,
    pressure,
    pressure_inverse,
    pressure_prime,
    quadratic_potential,
    relative_entropy_kernel,
    relative_pressure_kernel,
)
from laguerre_flow.errors import DomainError, NegativeDensity

GAMMAS = [1.5, 2.0, 4.0]


class TestPressure:
    def test_quadratic_family(self):
        model = power_law(2.0)
        assert pressure(model, 3.0) == pytest.approx(9.0, abs=1e-14)

    def test_zero_density(self):
        assert pressure(power_law(2.0), 0.0) == 0.0

    def test_gamma_three_halves(self):
        assert pressure(power_law(1.5), 4.0) == pytest.approx(8.0, rel=1e-14)

    def test_negative_density_rejected(self):
        with pytest.raises(NegativeDensity):
            pressure(power_law(2.0), -0.1)

    @pytest.mark.parametrize("gamma", GAMMAS)
    def test_derivative_identity(self, gamma):
        # P'(r) = r U''(r), checked against finite differences of P
        model = power_law(gamma)
        r = np.geomspace(1e-3, 10.0, 40)
        h = 1e-6 * np.maximum(r, 1.0)
        fd = (pressure(model, r + h) - pressure(model, r - h)) / (2 * h)
        assert np.allclose(fd, pressure_prime(model, r), rtol=1e-8)

    @pytest.mark.parametrize("gamma", GAMMAS)
    def test_inverse_roundtrip(self, gamma):
        model = power_law(gamma)
        y = np.geomspace(1e-6, 50.0, 25)
        assert np.allclose(pressure(model, pressure_inverse(model, y)), y, rtol=1e-12)

    def test_inverse_rootfinding_for_custom_energy(self):
        # same power energy but supplied without the gamma tag
        g = 2.5
        c = 1.0 / (g - 1.0)
        model = from_config_key("power", g)
        custom = type(model)(
            u=lambda r: c * np.power(r, g),
            u_prime=lambda r: g * c * np.power(r, g - 1.0),
            u_second=lambda r: g * np.power(r, g - 2.0),
        )
        for y in [1e-4, 0.3, 7.0, 400.0]:
            assert pressure_inverse(custom, y) == pytest.approx(
                pressure_inverse(model, y), rel=1e-10
            )


class TestConjugate:
    def test_closed_form_points(self):
        assert cstar_prime(power_law(2.0), 1.0, -4.0) == pytest.approx(0.5)
        assert cstar_prime(power_law(2.0), 2.0, -1.0) == pytest.approx(2.0)
        assert cstar_prime(power_law(4.0), 1.0, -16.0) == pytest.approx(0.5)

    def test_rejects_nonnegative_argument(self):
        with pytest.raises(DomainError):
            cstar_prime(power_law(2.0), 1.0, 0.0)
        with pytest.raises(DomainError):
            cstar_prime(power_law(2.0), 1.0, 0.5)

    @pytest.mark.parametrize("gamma", GAMMAS)
    def test_prime_increasing_in_s(self, gamma):
        model = power_law(gamma)
        s = -np.geomspace(1e-3, 100.0, 30)[::-1]
        vals = cstar_prime(model, 1.3, s)
        assert np.all(np.diff(vals) > 0.0)

    @pytest.mark.parametrize("gamma", GAMMAS)
    def test_value_is_legendre_transform(self, gamma):
        # C*(s) should dominate s*a - C(a) with equality at the maximizer
        from scipy.optimize import minimize_scalar

        model = power_law(gamma)
        mass = 0.7
        for s in [-0.3, -2.0, -11.0]:
            star = cstar_value(model, mass, s)
            a = np.geomspace(1e-3, 1e3, 2000)
            vals = s * a - cell_cost(model, mass, a)
            k = int(np.argmax(vals))
            res = minimize_scalar(
                lambda v: -(s * v - cell_cost(model, mass, v)),
                bounds=(a[max(k - 1, 0)], a[min(k + 1, len(a) - 1)]),
                method="bounded",
                options={"xatol": 1e-13},
            )
            brute = -res.fun
            assert star >= brute - 1e-12
            assert star == pytest.approx(brute, rel=1e-9)

    @pytest.mark.parametrize("gamma", GAMMAS)
    def test_second_derivative_fd(self, gamma):
        model = power_law(gamma)
        s = np.array([-0.2, -1.0, -7.0])
        h = 1e-6
        fd = (cstar_prime(model, 2.0, s + h) - cstar_prime(model, 2.0, s - h)) / (2 * h)
        assert np.allclose(fd, cstar_second(model, 2.0, s), rtol=1e-7)


class TestCellCost:
    def test_direct_value(self):
        assert cell_cost(power_law(2.0), 1.0, 0.5) == pytest.approx(2.0)

    def test_nonpositive_area_is_infinite(self):
        model = power_law(2.0)
        assert cell_cost(model, 1.0, 0.0) == np.inf
        assert cell_cost(model, 1.0, -1.0) == np.inf

    @pytest.mark.parametrize("gamma", GAMMAS)
    def test_convex_decreasing_in_area(self, gamma):
        model = power_law(gamma)
        a = np.linspace(0.05, 4.0, 200)
        c = cell_cost(model, 1.0, a)
        assert np.all(np.diff(c) < 0.0)
        midpoint = cell_cost(model, 1.0, 0.5 * (a[:-1] + a[1:]))
        assert np.all(midpoint <= 0.5 * (c[:-1] + c[1:]) + 1e-12)


class TestRelativeKernels:
    def test_identity_cases(self):
        model = power_law(2.0)
        assert relative_entropy_kernel(model, 7.0, 7.0) == 0.0
        assert relative_pressure_kernel(model, 3.0, 3.0) == 0.0

    def test_quadratic_closed_form(self):
        # gamma = 2: both kernels reduce to (r - s)^2
        model = power_law(2.0)
        assert relative_entropy_kernel(model, 3.0, 1.0) == pytest.approx(4.0)
        assert relative_pressure_kernel(model, 3.0, 1.0) == pytest.approx(4.0)

    def test_three_term_formula(self):
        model = power_law(4.0)
        r, s = 2.0, 1.0
        expected = model.u(r) - model.u(s) - model.u_prime(s) * (r - s)
        assert relative_entropy_kernel(model, r, s) == pytest.approx(expected, rel=1e-12)

    def test_domain_errors(self):
        model = power_law(2.0)
        with pytest.raises(DomainError):
            relative_entropy_kernel(model, 1.0, 0.0)
        with pytest.raises(DomainError):
            relative_pressure_kernel(model, 1.0, -1.0)

    @settings(max_examples=200, deadline=None)
    @given(
        r=st.floats(0.0, 50.0),
        s=st.floats(1e-6, 50.0),
        gamma=st.sampled_from(GAMMAS),
    )
    def test_entropy_nonnegative(self, r, s, gamma):
        val = relative_entropy_kernel(power_law(gamma), r, s)
        assert val >= -1e-11 * max(1.0, abs(r) ** gamma, abs(s) ** gamma)

    @settings(max_examples=200, deadline=None)
    @given(
        r=st.floats(0.0, 30.0),
        s=st.floats(1e-4, 30.0),
        gamma=st.sampled_from(GAMMAS),
    )
    def test_pressure_bounded_by_entropy(self, r, s, gamma):
        # |P(r|s)| <= (gamma - 1) U(r|s) for the power family
        model = power_law(gamma)
        p = relative_pressure_kernel(model, r, s)
        u = relative_entropy_kernel(model, r, s)
        bound = (gamma - 1.0) * u
        assert abs(p) <= bound + 1e-9 * max(1.0, bound)


class TestPotential:
    def test_quadratic_value_and_gradient(self):
        pot = quadratic_potential([1.0, -2.0])
        x = np.array([[1.0, -2.0], [2.0, 0.0]])
        assert np.allclose(pot.value(x), [0.0, 0.5 * (1.0 + 4.0)])
        assert np.allclose(pot.gradient(x), [[0.0, 0.0], [1.0, 2.0]])

    def test_gradient_matches_fd(self):
        pot = quadratic_potential([0.3, 0.7])
        rng = np.random.default_rng(5)
        x = rng.random((4, 2))
        h = 1e-6
        for d in range(2):
            dx = np.zeros(2)
            dx[d] = h
            fd = (pot.value(x + dx) - pot.value(x - dx)) / (2 * h)
            assert np.allclose(pot.gradient(x)[:, d], fd, atol=1e-8)

    def test_none_potential(self):
        pot = no_potential()
        x = np.ones((3, 2))
        assert np.all(pot.value(x) == 0.0)
        assert np.all(pot.gradient(x) == 0.0)


def test_power_family_requires_gamma_above_one():
    with pytest.raises(ValueError):
        power_law(1.0)
    with pytest.raises(ValueError):
        from_config_key("power", None)
    with pytest.raises(ValueError):
        from_config_key("cubic-spline", 2.0)
