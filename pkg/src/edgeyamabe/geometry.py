"""Model cone geometry and the conformal transformation laws.

The model manifold is the warped product ``dx^2 + f(x)^2 g^F`` over
``(0, x_max]`` with an ``n``-dimensional fiber of constant scalar curvature
``S_F``.  Conformal factors are radial, ``g = u^{4/(m-2)} g_init``, and the
fiber volume is normalized to one in every integral.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

from .errors import DomainError, PositivityError

LINEAR = "linear"
SINH = "sinh"
PERTURBED_SINH = "perturbed_sinh"
WARP_KINDS = (LINEAR, SINH, PERTURBED_SINH)

# shape-id -> (s, s', s'');  every shape satisfies s(x) = x^2 + O(x^4)
_SHAPES: dict[str, tuple[Callable, Callable, Callable]] = {
    "bump": (
        lambda x: x**2 * np.exp(-(x**2)),
        lambda x: (2.0 * x - 2.0 * x**3) * np.exp(-(x**2)),
        lambda x: (2.0 - 10.0 * x**2 + 4.0 * x**4) * np.exp(-(x**2)),
    ),
    "quadratic": (
        lambda x: x**2,
        lambda x: 2.0 * x,
        lambda x: 2.0 + 0.0 * x,
    ),
}
SHAPES = tuple(_SHAPES)

OBSTRUCTION_TOL = 1e-12


@dataclass(frozen=True)
class WarpSpec:
    """Warp function ``f`` with ``f(0) = 0`` and ``f'(0) = 1``.

    ``perturbed_sinh`` is ``f(x) = sinh(x) * exp(eps * s(x))`` with ``s`` one
    of the registered shapes; all kinds satisfy ``f(x) = x + O(x^3)``.
    """

    kind: str = SINH
    eps: float = 0.0
    shape: str = "bump"

    def __post_init__(self):
        if self.kind not in WARP_KINDS:
            raise ValueError(f"unknown warp kind {self.kind!r}; expected one of {WARP_KINDS}")
        if self.kind == PERTURBED_SINH and self.shape not in _SHAPES:
            raise ValueError(f"unknown perturbation shape {self.shape!r}; expected one of {SHAPES}")

    def _perturbation(self, x):
        s, ds, d2s = _SHAPES[self.shape]
        return s(x), ds(x), d2s(x)

    def f(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == LINEAR:
            return x.copy()
        if self.kind == SINH:
            return np.sinh(x)
        s, _, _ = self._perturbation(x)
        return np.sinh(x) * np.exp(self.eps * s)

    def df(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == LINEAR:
            return np.ones_like(x)
        if self.kind == SINH:
            return np.cosh(x)
        s, ds, _ = self._perturbation(x)
        e = self.eps
        return np.exp(e * s) * (np.cosh(x) + e * ds * np.sinh(x))

    def d2f(self, x):
        x = np.asarray(x, dtype=float)
        if self.kind == LINEAR:
            return np.zeros_like(x)
        if self.kind == SINH:
            return np.sinh(x)
        s, ds, d2s = self._perturbation(x)
        e = self.eps
        return np.exp(e * s) * (
            np.sinh(x) + 2.0 * e * ds * np.cosh(x) + (e * d2s + (e * ds) ** 2) * np.sinh(x)
        )

    def one_minus_df(self, x):
        """``1 - f'(x)`` evaluated without cancellation near ``x = 0``."""
        x = np.asarray(x, dtype=float)
        if self.kind == LINEAR:
            return np.zeros_like(x)
        half = 2.0 * np.sinh(0.5 * x) ** 2  # cosh(x) - 1
        if self.kind == SINH:
            return -half
        s, ds, _ = self._perturbation(x)
        e = self.eps
        return -np.expm1(e * s) * np.cosh(x) - half - np.exp(e * s) * e * ds * np.sinh(x)

    @property
    def d3f_at_zero(self) -> float:
        if self.kind == LINEAR:
            return 0.0
        if self.kind == SINH:
            return 1.0
        return 1.0 + 6.0 * self.eps


@dataclass(frozen=True)
class EdgeModel:
    """Isolated cone ``dx^2 + f(x)^2 g^F`` truncated at ``x_max``."""

    m: int
    n: int
    fiber_scal: float
    fiber_lambda0: float
    warp: WarpSpec = field(default_factory=WarpSpec)
    x_max: float = 1.0

    def __post_init__(self):
        if self.m != self.n + 1:
            raise ValueError(f"cone model needs m = n + 1, got m={self.m}, n={self.n}")
        if self.m < 3:
            raise ValueError(f"dimension must satisfy m >= 3, got m={self.m}")
        if not self.x_max > 0:
            raise ValueError("x_max must be positive")
        if self.fiber_lambda0 < 0:
            raise ValueError("fiber_lambda0 must be nonnegative")

    @property
    def rigid_fiber_scal(self) -> float:
        return float(self.n * (self.n - 1))

    @property
    def N(self) -> float:
        return (self.m + 2) / (self.m - 2)

    @property
    def volume_exponent(self) -> float:
        """Exponent ``2m/(m-2)`` of the conformal volume density."""
        return 2.0 * self.m / (self.m - 2)

    @property
    def kappa(self) -> float:
        """Coefficient ``4(m-1)/(m-2)`` of the conformal Laplacian."""
        return 4.0 * (self.m - 1) / (self.m - 2)

    @classmethod
    def rigid(cls, m: int, kind: str = SINH, eps: float = 0.0, shape: str = "bump",
              x_max: float = 1.0, fiber_lambda0: float | None = None) -> "EdgeModel":
        """Model with the round-sphere-like fiber data ``S_F = n(n-1)``."""
        n = m - 1
        lam0 = float(n) + 0.5 if fiber_lambda0 is None else fiber_lambda0
        return cls(m=m, n=n, fiber_scal=float(n * (n - 1)), fiber_lambda0=lam0,
                   warp=WarpSpec(kind, eps, shape), x_max=x_max)


@dataclass
class CurvatureField:
    """Scalar curvature of ``g_init`` at mesh nodes.

    ``a`` and ``b`` are the bounds ``-a <= scal <= -b``; ``negative`` flags
    the strictly negative case (``b > 0``).
    """

    values: np.ndarray
    a: float
    b: float
    negative: bool

    @classmethod
    def from_values(cls, values) -> "CurvatureField":
        values = np.asarray(values, dtype=float)
        hi = float(values.max())
        lo = float(values.min())
        return cls(values=values, a=-lo, b=-hi, negative=hi < 0.0)

    @property
    def is_constant(self) -> bool:
        return bool(np.ptp(self.values) <= 1e-12 * max(1.0, float(np.abs(self.values).max())))


def warped_scalar_curvature(model: EdgeModel, x):
    """Scalar curvature of ``dx^2 + f^2 g^F`` at ``x > 0``.

    ``scal = S_F/f^2 - 2n f''/f - n(n-1) f'^2/f^2``, regrouped as
    ``(S_F - n(n-1))/f^2 + n(n-1)(1-f')(1+f')/f^2 - 2n f''/f`` so that the
    rigid part cancels exactly.
    """
    x = np.asarray(x, dtype=float)
    if np.any(x <= 0.0) or np.any(x > model.x_max * (1 + 1e-14)):
        raise DomainError("warped_scalar_curvature needs 0 < x <= x_max")
    w, n = model.warp, model.n
    f = w.f(x)
    if np.any(f <= 0.0):
        raise DomainError("warp function is not positive on the requested points")
    omd = w.one_minus_df(x)
    df = 1.0 - omd
    out = ((model.fiber_scal - n * (n - 1)) + n * (n - 1) * omd * (1.0 + df)) / f**2 - 2.0 * n * w.d2f(x) / f
    return out if out.ndim else float(out)


def tip_scalar_curvature(model: EdgeModel) -> float:
    """Limit of the scalar curvature at the cone tip ``x -> 0``.

    Finite only when the fiber obstruction ``S_F = n(n-1)`` holds; then
    ``f = x + f'''(0) x^3/6 + ...`` gives ``-n(n+1) f'''(0)``.
    """
    if abs(model.fiber_scal - model.rigid_fiber_scal) > OBSTRUCTION_TOL:
        raise DomainError("scalar curvature blows up at the tip unless S_F = n(n-1)")
    return -model.n * (model.n + 1) * model.warp.d3f_at_zero


def curvature_field(model: EdgeModel, mesh) -> CurvatureField:
    x = mesh.nodes
    values = np.empty_like(x)
    values[0] = tip_scalar_curvature(model)
    values[1:] = warped_scalar_curvature(model, x[1:])
    return CurvatureField.from_values(values)


def _check_positive(u):
    u = np.asarray(u, dtype=float)
    if not np.all(u > 0.0):
        raise PositivityError(f"conformal factor must be positive (min={u.min():.3e})")
    return u


def _scal_values(scal0):
    return np.asarray(getattr(scal0, "values", scal0), dtype=float)


def conformal_scal(u, lap_u, scal0, m: int):
    """Scalar curvature of ``u^{4/(m-2)} g_init`` from ``u`` and ``Delta u``."""
    u = _check_positive(u)
    lap_u = np.asarray(lap_u, dtype=float)
    N = (m + 2) / (m - 2)
    kappa = 4.0 * (m - 1) / (m - 2)
    return u ** (-N) * (-kappa * lap_u + _scal_values(scal0) * u)


def conformal_volume(u, model: EdgeModel, mesh) -> float:
    u = _check_positive(u)
    return float(np.dot(mesh.weights, u**model.volume_exponent))


def _laplacian(model, mesh, op):
    if op is None:
        from .operators import assemble_laplacian

        op = assemble_laplacian(mesh, model, 0.0)
    return op


def total_scalar_functional(u, model: EdgeModel, mesh, *, scal0=None, op=None,
                            return_direct: bool = False):
    """Normalized total scalar curvature ``S(u^{4/(m-2)} g_init)``.

    Evaluated in the integrated-by-parts (Dirichlet form) version.  With
    ``return_direct=True`` the pair ``(dirichlet, direct)`` is returned, where
    ``direct`` integrates ``scal(g) dvol_g`` literally.
    """
    u = _check_positive(u)
    op = _laplacian(model, mesh, op)
    s0 = _scal_values(curvature_field(model, mesh) if scal0 is None else scal0)
    norm_sq = conformal_volume(u, model, mesh) ** ((model.m - 2) / model.m)
    du = np.diff(u)
    energy = model.kappa * np.dot(mesh.face_coefficients, du * du) + np.dot(mesh.weights, s0 * u * u)
    dirichlet = energy / norm_sq
    if not return_direct:
        return float(dirichlet)
    from .operators import apply

    scal_g = conformal_scal(u, apply(op, u), s0, model.m)
    direct = np.dot(mesh.weights, scal_g * u**model.volume_exponent) / norm_sq
    return float(dirichlet), float(direct)


def average_scalar_rho(u, model: EdgeModel, mesh, *, scal0=None, op=None) -> float:
    """Volume average of ``scal(g)`` for ``g = u^{4/(m-2)} g_init``."""
    u = _check_positive(u)
    op = _laplacian(model, mesh, op)
    from .operators import apply

    s0 = _scal_values(curvature_field(model, mesh) if scal0 is None else scal0)
    scal_g = conformal_scal(u, apply(op, u), s0, model.m)
    dens = mesh.weights * u**model.volume_exponent
    return float(np.dot(dens, scal_g) / dens.sum())


@dataclass
class Finding:
    code: str
    level: str  # "ok" | "warning" | "error"
    message: str


@dataclass
class FeasibilityReport:
    findings: list[Finding]

    @property
    def ok(self) -> bool:
        return not any(f.level == "error" for f in self.findings)

    @property
    def warnings(self) -> list[Finding]:
        return [f for f in self.findings if f.level == "warning"]

    @property
    def errors(self) -> list[Finding]:
        return [f for f in self.findings if f.level == "error"]

    def to_dict(self) -> dict:
        return {"ok": self.ok, "findings": [vars(f) for f in self.findings]}


def validate_feasibility(model: EdgeModel, n_samples: int = 40) -> FeasibilityReport:
    """Check the rigid-perturbation, fiber-obstruction and spectral-gap conditions."""
    findings = []

    # |f^2 - x^2| / x^4 must stay bounded as x -> 0; a blow-up shows as growth
    # of the ratio over geometrically shrinking samples.
    xs = min(model.x_max, 0.5) * np.logspace(0, -4, n_samples)
    f = model.warp.f(xs)
    ratio = np.abs(f * f - xs * xs) / xs**4
    finite = np.all(np.isfinite(ratio))
    growth = ratio[-1] / max(ratio[len(ratio) // 2], 1e-300) if finite else math.inf
    if not finite or (ratio[-1] > 1e-8 and growth > 10.0):
        findings.append(Finding("rigid_perturbation", "error",
                                "|f(x)^2 - x^2| is not O(x^4) near the tip"))
    else:
        findings.append(Finding("rigid_perturbation", "ok",
                                f"sup |f^2-x^2|/x^4 on samples = {float(ratio.max()):.3e}"))

    gap = abs(model.fiber_scal - model.rigid_fiber_scal)
    if gap > OBSTRUCTION_TOL:
        findings.append(Finding("fiber_obstruction", "error",
                                f"fiber scalar curvature must be n(n-1) = {model.rigid_fiber_scal:g}, "
                                f"got {model.fiber_scal:g}"))
    else:
        findings.append(Finding("fiber_obstruction", "ok", "S_F = n(n-1)"))

    if model.fiber_lambda0 <= model.n:
        findings.append(Finding("fiber_spectral_gap", "warning",
                                f"lambda0 = {model.fiber_lambda0:g} <= n = {model.n}; "
                                "this gap assumption is not needed for the radial model"))
    else:
        findings.append(Finding("fiber_spectral_gap", "ok", f"lambda0 > n = {model.n}"))
    return FeasibilityReport(findings)
