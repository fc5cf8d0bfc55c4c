import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.linalg import eigh_tridiagonal

from edgeyamabe.errors import DivergenceError
from edgeyamabe.geometry import curvature_field, total_scalar_functional
from edgeyamabe.operators import apply, assemble_laplacian, weighted_inner
from edgeyamabe.spectral import (SpectralResult, assemble_conformal_laplacian, eigen_conformal_scal_identity,
                                 first_eigenpair, minimize_yamabe_functional, sign_of, spline_laplacian,
                                 trichotomy_check, uniform_sign)

from conftest import model_and_mesh


def _oracle_lambda1(op):
    d, e = op.symmetrized_bands()
    return float(eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 0))[0])


def _eigen(kind, K, m=4):
    model, mesh = model_and_mesh(kind, m=m, K=K)
    op = assemble_conformal_laplacian(model, mesh)
    lam, phi, res, it = first_eigenpair(op, mesh)
    return model, mesh, op, SpectralResult(lam, phi, res, it)


class TestConformalLaplacian:
    def test_constants(self):
        model, mesh = model_and_mesh("sinh", K=64)
        op = assemble_conformal_laplacian(model, mesh)
        np.testing.assert_allclose(apply(op, np.ones(65)), -12.0, rtol=1e-12)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1), kind=st.sampled_from(["linear", "sinh", "perturbed_sinh"]))
    def test_weighted_symmetry(self, seed, kind):
        gen = np.random.default_rng(seed)
        model, mesh = model_and_mesh(kind, K=64)
        op = assemble_conformal_laplacian(model, mesh)
        u, v = gen.normal(size=(2, 65))
        lhs = weighted_inner(mesh, apply(op, u), v)
        assert abs(lhs - weighted_inner(mesh, u, apply(op, v))) <= 1e-10 * max(1.0, abs(lhs))

    def test_quadratic_form(self, rng):
        model, mesh = model_and_mesh("perturbed_sinh", K=64)
        op = assemble_conformal_laplacian(model, mesh)
        u = rng.normal(size=65)
        assert op.quadratic_form(u) == pytest.approx(weighted_inner(mesh, apply(op, u), u), rel=1e-10)

    def test_hyperbolic_variational_bound(self):
        model, mesh, op, res = _eigen("sinh", 128)
        ones = np.ones(129)
        rayleigh = op.quadratic_form(ones) / weighted_inner(mesh, ones, ones)
        assert rayleigh == pytest.approx(-12.0)
        assert res.lambda1 <= rayleigh + 1e-10


class TestFirstEigenpair:
    def test_diagonal_operator(self):
        model, mesh = model_and_mesh("perturbed_sinh", K=64)
        op = assemble_conformal_laplacian(model, mesh, kappa=0.0)
        lam, phi, _, _ = first_eigenpair(op, mesh)
        s0 = curvature_field(model, mesh).values
        assert lam == pytest.approx(s0.min(), rel=1e-10)
        assert int(np.argmax(phi)) == int(np.argmin(s0))
        assert np.all(phi >= 0)

    def test_hyperbolic_against_refined_grid(self):
        _, _, _, res = _eigen("sinh", 512)
        fine_model, fine = model_and_mesh("sinh", K=4096)
        oracle = _oracle_lambda1(assemble_conformal_laplacian(fine_model, fine))
        assert res.lambda1 == pytest.approx(oracle, rel=1e-3)
        assert res.lambda1 == pytest.approx(-12.0, rel=1e-10)

    @pytest.mark.parametrize("kind", ["linear", "sinh", "perturbed_sinh"])
    def test_matches_tridiagonal_eigensolver(self, kind):
        _, _, op, res = _eigen(kind, 256)
        assert res.lambda1 == pytest.approx(_oracle_lambda1(op), rel=1e-8, abs=1e-8)
        assert np.all(res.phi1 > 0)

    def test_normalization(self):
        _, mesh, _, res = _eigen("perturbed_sinh", 128)
        assert weighted_inner(mesh, res.phi1, res.phi1) == pytest.approx(1.0)
        assert res.residual < 1e-8

    def test_shift_additivity(self):
        """For constant curvature the first eigenvalue is scal plus the Neumann ground state 0."""
        model, mesh, _, res = _eigen("sinh", 128)
        lap = assemble_laplacian(mesh, model)
        neumann = -model.kappa * lap.sub, -model.kappa * lap.diag, -model.kappa * lap.sup
        d, e = np.array(neumann[1]), neumann[2][:-1] * np.sqrt(mesh.weights[:-1] / mesh.weights[1:])
        ground = eigh_tridiagonal(d, e, eigvals_only=True, select="i", select_range=(0, 0))[0]
        assert ground >= -1e-8
        assert res.lambda1 == pytest.approx(-12.0 + ground, abs=1e-8)

    @settings(max_examples=20, deadline=None)
    @given(seed=st.integers(0, 2**31 - 1))
    def test_rayleigh_lower_bound(self, seed):
        gen = np.random.default_rng(seed)
        model, mesh, op, res = _eigen("perturbed_sinh", 64)
        v = 0.1 + gen.random(65)
        rq = op.quadratic_form(v) / weighted_inner(mesh, v, v)
        assert rq >= res.lambda1 - 1e-8


class TestIdentity:
    def test_constant_curvature_exact(self):
        model, mesh, _, res = _eigen("sinh", 128)
        const = SpectralResult(res.lambda1, np.full(129, res.phi1.mean()), 0.0, 0)
        assert eigen_conformal_scal_identity(const, model, mesh).max_relative_deviation <= 1e-12

    def test_perturbed_improves_under_refinement(self):
        devs = []
        for K in (256, 512, 1024):
            model, mesh, _, res = _eigen("perturbed_sinh", K)
            rep = eigen_conformal_scal_identity(res, model, mesh)
            devs.append(rep.max_relative_deviation)
            assert rep.scal_sign == sign_of(res.lambda1) == "-"
        assert devs[1] <= 1e-3
        assert devs[2] < devs[1] < devs[0]

    def test_spline_laplacian_on_quadratic(self):
        model, mesh = model_and_mesh("linear", m=3, K=64)
        x = mesh.nodes
        lap = spline_laplacian(x**2, model, mesh)
        # x^2 violates the zero-slope clamp at x_max; compare away from it
        np.testing.assert_allclose(lap[x <= 0.75], 6.0, rtol=1e-3)
        cos_lap = spline_laplacian(np.cos(np.pi * x), model, mesh)
        exact = -np.pi**2 * np.cos(np.pi * x[1:]) - 2 * np.pi * np.sin(np.pi * x[1:]) / x[1:]
        np.testing.assert_allclose(cos_lap[1:], exact, atol=2e-2)


class TestSigns:
    @pytest.mark.parametrize("value,sign", [(1e-7, "0"), (-1e-7, "0"), (2e-6, "+"), (-3.0, "-")])
    def test_sign_band(self, value, sign):
        assert sign_of(value) == sign

    def test_uniform(self):
        assert uniform_sign([-1, -2]) == "-"
        assert uniform_sign([-1, 2]) == "mixed"


class TestMinimizer:
    def test_never_exceeds_start(self):
        model, mesh = model_and_mesh("sinh", K=128)
        start = total_scalar_functional(np.ones(129), model, mesh)
        best, _, history = minimize_yamabe_functional(model, mesh, iters=50)
        assert best <= start + 1e-12
        assert np.all(np.diff(history) <= 1e-12 * abs(start))
        assert best == pytest.approx(-12 * mesh.weights.sum() ** 0.5, rel=1e-10)

    def test_hyperbolic_negative(self):
        model, mesh = model_and_mesh("sinh", K=128)
        assert minimize_yamabe_functional(model, mesh)[0] < 0

    @pytest.mark.parametrize("scale", [1e-3, 1.0, 50.0])
    def test_initial_scaling_invariance(self, scale):
        model, mesh = model_and_mesh("perturbed_sinh", K=64)
        u0 = 1.0 + 0.2 * np.cos(np.pi * mesh.nodes)
        ref = minimize_yamabe_functional(model, mesh, u0=u0)[0]
        assert minimize_yamabe_functional(model, mesh, u0=scale * u0)[0] == pytest.approx(ref, abs=1e-8)

    def test_sign_matches_eigenvalue(self):
        model, mesh, _, res = _eigen("perturbed_sinh", 128)
        assert sign_of(minimize_yamabe_functional(model, mesh)[0]) == sign_of(res.lambda1)

    def test_divergence_guard(self):
        model, mesh = model_and_mesh("perturbed_sinh", K=64)
        with pytest.raises(DivergenceError):
            minimize_yamabe_functional(model, mesh, step=1e6, max_rejections=2)


class TestTrichotomy:
    @pytest.mark.parametrize("kind,signs", [("sinh", ("-", "-", "-")), ("linear", ("0", "0", "0")),
                                            ("perturbed_sinh", ("-", "-", "-"))])
    def test_signs(self, kind, signs):
        model, mesh = model_and_mesh(kind, K=256)
        rep = trichotomy_check(model, mesh)
        assert rep.signs == signs and rep.passed and rep.phi1_positive

    @pytest.mark.parametrize("eps", [0.01, 0.05])
    def test_small_perturbations(self, eps):
        model, mesh = model_and_mesh("perturbed_sinh", K=128, eps=eps)
        assert trichotomy_check(model, mesh).signs == ("-", "-", "-")

    @pytest.mark.parametrize("m", [3, 5])
    def test_other_dimensions(self, m):
        model, mesh = model_and_mesh("perturbed_sinh", m=m, K=128)
        assert trichotomy_check(model, mesh).passed
