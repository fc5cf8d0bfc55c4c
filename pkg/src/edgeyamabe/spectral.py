"""First eigenpair of the conformal Laplacian and the sign of the conformal invariant."""
from __future__ import annotations

import logging
from dataclasses import dataclass

import numpy as np
from scipy.interpolate import CubicSpline

from .errors import ConvergenceError, DivergenceError, PositivityError
from .geometry import EdgeModel, conformal_scal, curvature_field, total_scalar_functional
from .operators import Mesh, TridiagonalOperator, apply, assemble_laplacian, solve_shifted, thomas

log = logging.getLogger(__name__)

ZERO_BAND = 1e-6


@dataclass
class ConformalLaplacian(TridiagonalOperator):
    """``-kappa Delta_h + diag(scal_init)`` with ``kappa = 4(m-1)/(m-2)``."""

    kappa: float = 0.0

    def quadratic_form(self, u) -> float:
        """``<box u, u>`` in the weighted inner product, via the flux form."""
        u = np.asarray(u, dtype=float)
        du = np.diff(u)
        face = self.sup[:-1] * self.weights[:-1]
        return float(-np.dot(face, du * du) + np.dot(self.weights * self.potential, u * u))


def assemble_conformal_laplacian(model: EdgeModel, mesh: Mesh, scal0=None,
                                 kappa: float | None = None) -> ConformalLaplacian:
    """Assemble the conformal Laplacian.

    ``kappa`` overrides the diffusion coefficient; ``kappa=0`` gives the
    diagonal-only debug operator.
    """
    lap = assemble_laplacian(mesh, model, 0.0)
    s0 = curvature_field(model, mesh).values if scal0 is None else np.asarray(
        getattr(scal0, "values", scal0), dtype=float)
    k = model.kappa if kappa is None else float(kappa)
    sub = -k * lap.sub
    sup = -k * lap.sup
    return ConformalLaplacian(sub=sub, diag=s0 - sub - sup, sup=sup, potential=s0.copy(),
                              weights=mesh.weights, kappa=k)


def _wnorm(w, u):
    return float(np.sqrt(np.dot(w, u * u)))


def operator_norm(op: TridiagonalOperator) -> float:
    """Max absolute row sum, the scale for relative residuals."""
    return float(np.max(np.abs(op.sub) + np.abs(op.diag) + np.abs(op.sup)))


def first_eigenpair(op: TridiagonalOperator, mesh: Mesh, tol: float = 1e-10,
                    max_iter: int = 500, floor_tol: float = 1e-13):
    """Lowest eigenpair by shifted inverse iteration.

    The shift sits one unit below the Gershgorin lower bound, so the shifted
    operator is positive definite and the iteration converges to the bottom
    of the spectrum.  ``phi`` is normalized to unit weighted L2 norm and
    positive sum.

    Iteration stops when the weighted residual ``||box phi - lambda phi||_w``
    drops below ``tol`` or stops decreasing.  On very stiff meshes round-off
    keeps the absolute residual above ``tol``; the stagnated pair is accepted
    if its residual relative to ``||box||_inf`` is below ``floor_tol``.
    Returns ``(lambda1, phi1, residual, iterations)`` with the absolute residual.
    """
    w = mesh.weights
    coupled = np.any(op.sub != 0) or np.any(op.sup != 0)
    if not coupled:
        # eigenpairs of a diagonal operator are explicit: the smallest entry and its indicator
        i = int(np.argmin(op.diag))
        phi = np.zeros(op.size)
        phi[i] = 1.0 / np.sqrt(w[i])
        return float(op.diag[i]), phi, 0.0, 0
    lower_bound = float(np.min(op.diag - np.abs(op.sub) - np.abs(op.sup)))
    sigma = lower_bound - 1.0
    low, diag, up = op.sub, op.diag - sigma, op.sup
    scale = max(1.0, operator_norm(op))
    phi = np.ones(op.size)
    phi /= _wnorm(w, phi)
    lam = np.nan
    residual = np.inf
    stalled = 0
    for it in range(1, max_iter + 1):
        y = thomas(low, diag, up, phi)
        phi = y / _wnorm(w, y)
        if phi.sum() < 0:
            phi = -phi
        box_phi = apply(op, phi)
        lam = float(np.dot(w, box_phi * phi))
        previous, residual = residual, _wnorm(w, box_phi - lam * phi)
        if residual < tol:
            break
        stalled = stalled + 1 if residual >= 0.5 * previous else 0
        if stalled >= 3 and residual / scale < floor_tol:
            break
    else:
        raise ConvergenceError(f"inverse iteration stalled at residual {residual:.3e} after {max_iter} iterations")
    if not np.all(phi > 0):
        raise PositivityError("first eigenfunction changes sign; refine the mesh")
    return lam, phi, residual, it


def spline_laplacian(u, model: EdgeModel, mesh: Mesh) -> np.ndarray:
    """``Delta u`` from a clamped cubic spline of ``u`` (independent of ``Delta_h``).

    Slopes are clamped to zero at both ends (even reflection at the tip,
    reflecting outer boundary); at the tip ``Delta u = (n+1) u''(0)``.
    """
    x = mesh.nodes
    sp = CubicSpline(x, u, bc_type=((1, 0.0), (1, 0.0)))
    d1 = sp(x, 1)
    d2 = sp(x, 2)
    out = np.empty_like(x)
    out[0] = (model.n + 1) * d2[0]
    xi = x[1:]
    out[1:] = d2[1:] + model.n * model.warp.df(xi) / model.warp.f(xi) * d1[1:]
    return out


def sign_of(value: float, band: float = ZERO_BAND) -> str:
    if abs(value) < band:
        return "0"
    return "+" if value > 0 else "-"


def uniform_sign(values, band: float = ZERO_BAND) -> str:
    signs = {sign_of(float(v), band) for v in np.asarray(values)}
    return signs.pop() if len(signs) == 1 else "mixed"


@dataclass
class IdentityReport:
    max_relative_deviation: float
    scal_sign: str
    scal_tilde: np.ndarray

    def to_dict(self) -> dict:
        return {"max_relative_deviation": self.max_relative_deviation, "scal_sign": self.scal_sign}


@dataclass
class SpectralResult:
    lambda1: float
    phi1: np.ndarray
    residual: float
    iterations: int
    nu_estimate: float = float("nan")
    trichotomy_signs: tuple[str, str, str] = ("", "", "")


def eigen_conformal_scal_identity(result: SpectralResult, model: EdgeModel, mesh: Mesh,
                                  scal0=None) -> IdentityReport:
    """Compare ``scal(phi^{4/(m-2)} g_init)`` with ``lambda1 phi^{-4/(m-2)}``.

    The curvature of the new metric uses the spline Laplacian, so the
    deviation measures discretization error rather than solver residual.
    Deviation is relative to ``max(1, sup |lambda1 phi^{-4/(m-2)}|)``.
    """
    s0 = curvature_field(model, mesh).values if scal0 is None else getattr(scal0, "values", scal0)
    phi = result.phi1
    scal_tilde = conformal_scal(phi, spline_laplacian(phi, model, mesh), s0, model.m)
    target = result.lambda1 * phi ** (-4.0 / (model.m - 2))
    dev = float(np.abs(scal_tilde - target).max() / max(1.0, float(np.abs(target).max())))
    return IdentityReport(max_relative_deviation=dev, scal_sign=uniform_sign(scal_tilde),
                          scal_tilde=scal_tilde)


def _normalize(u, w, p):
    return u / float(np.dot(w, u**p)) ** (1.0 / p)


def minimize_yamabe_functional(model: EdgeModel, mesh: Mesh, iters: int = 500, step: float = 0.5,
                               u0=None, scal0=None, gtol: float = 1e-10, max_rejections: int = 10):
    """Upper estimate of the conformal invariant by projected gradient descent.

    The descent direction is the gradient of the total scalar curvature
    functional in the discrete ``H^1`` inner product (one tridiagonal solve).
    After each step the iterate is clipped at ``1e-8`` and renormalized to
    unit ``L^{2m/(m-2)}`` norm.  Rejected steps halve the step size; after
    ``max_rejections`` consecutive increases :class:`DivergenceError` is raised.
    Returns ``(best_value, best_u, history)``.
    """
    w = mesh.weights
    p = model.volume_exponent
    s0 = curvature_field(model, mesh).values if scal0 is None else np.asarray(
        getattr(scal0, "values", scal0), dtype=float)
    lap = assemble_laplacian(mesh, model, 0.0)
    u = np.ones_like(w) if u0 is None else np.array(u0, dtype=float)
    if not np.all(u > 0):
        raise PositivityError("initial guess must be positive")
    u = _normalize(u, w, p)

    def functional(v):
        return total_scalar_functional(v, model, mesh, scal0=s0, op=lap)

    ones = np.ones_like(w)
    value = functional(u)
    best, best_u = value, u.copy()
    history = [value]
    rejections = 0
    for _ in range(iters):
        # ||u||_p = 1, so S = E(u) and the weighted-L2 gradient is 2(box u - E u^{p-1})
        grad = 2.0 * (-model.kappa * apply(lap, u) + s0 * u - value * u ** (p - 1.0))
        direction = solve_shifted(lap, ones, 1.0, grad)
        if _wnorm(w, direction) < gtol:
            break
        while True:
            trial = _normalize(np.maximum(u - step * direction, 1e-8), w, p)
            trial_value = functional(trial)
            if trial_value <= value + 1e-14 * abs(value):
                rejections = 0
                break
            rejections += 1
            if rejections >= max_rejections:
                raise DivergenceError(f"functional increased {max_rejections} consecutive times")
            step *= 0.5
        u, value = trial, trial_value
        history.append(value)
        if value < best:
            best, best_u = value, u.copy()
        if abs(history[-2] - value) <= 1e-15 * max(1.0, abs(value)):
            break
    return best, best_u, history


@dataclass
class TrichotomyReport:
    lambda1: float
    nu_estimate: float
    identity_deviation: float
    signs: tuple[str, str, str]
    eigen_residual: float
    phi1_positive: bool

    @property
    def passed(self) -> bool:
        return len(set(self.signs)) == 1 and "mixed" not in self.signs

    def to_dict(self) -> dict:
        return {"lambda1": self.lambda1, "nu_estimate": self.nu_estimate,
                "identity_deviation": self.identity_deviation, "signs": list(self.signs),
                "eigen_residual": self.eigen_residual, "phi1_positive": self.phi1_positive,
                "passed": self.passed}


def trichotomy_check(model: EdgeModel, mesh: Mesh, iters: int = 500, step: float = 0.5,
                     band: float = ZERO_BAND) -> TrichotomyReport:
    """Signs of the first eigenvalue, of the conformal curvature, and of the invariant."""
    scal0 = curvature_field(model, mesh)
    op = assemble_conformal_laplacian(model, mesh, scal0)
    lam, phi, res, it = first_eigenpair(op, mesh)
    result = SpectralResult(lambda1=lam, phi1=phi, residual=res, iterations=it)
    ident = eigen_conformal_scal_identity(result, model, mesh, scal0)
    nu, _, _ = minimize_yamabe_functional(model, mesh, iters=iters, step=step, scal0=scal0)
    signs = (sign_of(lam, band), ident.scal_sign, sign_of(nu, band))
    log.info("trichotomy: lambda1=%.6g nu=%.6g signs=%s", lam, nu, signs)
    return TrichotomyReport(lambda1=lam, nu_estimate=nu, identity_deviation=ident.max_relative_deviation,
                            signs=signs, eigen_residual=res, phi1_positive=bool(np.all(phi > 0)))
