"""Graded radial mesh and the discrete singular Laplacian.

The Laplacian is assembled in flux (finite-volume) form on dual cells,

    (Delta_h u)_i = [F_{i+1/2} (u_{i+1} - u_i) - F_{i-1/2} (u_i - u_{i-1})] / w_i,

with face coefficients ``F = f(x_face)^n / (x_{i+1} - x_i)`` and dual-cell
weights ``w_i``.  The flux through the tip vanishes because ``f(0) = 0``;
at the tip row this reduces to ``2(n+1)(u_1 - u_0)/x_1^2``, the even-reflection
stencil for ``(n+1) u''(0)``.  The outer face carries no flux (reflecting).
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import AssemblyError, DominanceError, SingularPivotError

_GL_NODES, _GL_WEIGHTS = np.polynomial.legendre.leggauss(4)


@dataclass
class Mesh:
    """Nodes ``x_i = x_max (i/K)^gamma`` with dual-cell quadrature weights.

    ``weights[i]`` integrates ``f(x)^n dx`` over ``[x_{i-1/2}, x_{i+1/2}]``
    (clipped to ``[0, x_max]``), so ``sum(weights)`` is the model volume.
    ``face_coefficients[i]`` belongs to the face between nodes ``i`` and ``i+1``.
    """

    nodes: np.ndarray
    gamma: float
    x_max: float
    weights: np.ndarray
    faces: np.ndarray
    face_area: np.ndarray
    face_coefficients: np.ndarray

    @property
    def K(self) -> int:
        return len(self.nodes) - 1

    @property
    def spacing(self) -> np.ndarray:
        return np.diff(self.nodes)

    @property
    def local_width(self) -> np.ndarray:
        """Dual-cell width per node (the ``h`` in node-local tolerances)."""
        edges = np.concatenate(([self.nodes[0]], self.faces, [self.nodes[-1]]))
        return np.diff(edges)


def _gauss_integral(func, lo, hi):
    mid = 0.5 * (lo + hi)
    half = 0.5 * (hi - lo)
    pts = mid[:, None] + half[:, None] * _GL_NODES[None, :]
    return half * (func(pts) @ _GL_WEIGHTS)


def graded_nodes(K: int, gamma: float, x_max: float) -> np.ndarray:
    return x_max * (np.arange(K + 1) / K) ** gamma


def build_mesh(K: int, gamma: float, x_max: float, model, *, min_cells: int = 16) -> Mesh:
    """Graded mesh on ``[0, x_max]`` with quadrature against ``f(x)^n dx``.

    ``min_cells`` guards the production lower bound ``K >= 16``; lower it only
    for hand-checkable toy meshes.
    """
    if int(K) != K or K < min_cells:
        raise ValueError(f"K must be an integer >= {min_cells}, got {K}")
    if not gamma >= 1.0:
        raise ValueError(f"grading exponent must satisfy gamma >= 1, got {gamma}")
    if not x_max > 0:
        raise ValueError("x_max must be positive")
    K = int(K)
    x = graded_nodes(K, gamma, x_max)
    x[-1] = x_max
    faces = 0.5 * (x[:-1] + x[1:])
    n = model.n

    def density(s):
        return model.warp.f(s) ** n

    left = np.concatenate(([x[0]], faces))
    right = np.concatenate((faces, [x[-1]]))
    weights = _gauss_integral(density, left, x) + _gauss_integral(density, x, right)

    f_faces = model.warp.f(faces)
    if np.any(f_faces <= 0.0) or np.any(model.warp.f(x[1:]) <= 0.0):
        raise AssemblyError("warp function must be positive away from the tip")
    face_area = f_faces**n
    return Mesh(nodes=x, gamma=float(gamma), x_max=float(x_max), weights=weights,
                faces=faces, face_area=face_area, face_coefficients=face_area / np.diff(x))


@dataclass
class TridiagonalOperator:
    """Tridiagonal operator, self-adjoint in ``sum_i weights_i u_i v_i``.

    ``sub[i]`` and ``sup[i]`` multiply ``u[i-1]`` and ``u[i+1]`` in row ``i``
    (``sub[0] = sup[-1] = 0``).  ``potential`` is the row sum, kept separately so
    that products can be evaluated in difference form.
    """

    sub: np.ndarray
    diag: np.ndarray
    sup: np.ndarray
    potential: np.ndarray
    weights: np.ndarray

    @property
    def size(self) -> int:
        return len(self.diag)

    def dense(self) -> np.ndarray:
        return np.diag(self.diag) + np.diag(self.sub[1:], -1) + np.diag(self.sup[:-1], 1)

    def symmetrized_bands(self):
        """Diagonal and off-diagonal of ``W^{1/2} A W^{-1/2}`` (a symmetric matrix)."""
        w = self.weights
        return self.diag.copy(), self.sup[:-1] * np.sqrt(w[:-1] / w[1:])


@dataclass
class DiscreteLaplacian(TridiagonalOperator):
    """Tridiagonal ``Delta_h`` for the fiber mode ``lam`` (0 = radial)."""

    lam: float = 0.0


def assemble_laplacian(mesh: Mesh, model, lam: float = 0.0) -> DiscreteLaplacian:
    """Assemble ``u'' + n (f'/f) u' - lam f^{-2} u`` in flux form.

    For ``lam > 0`` the tip node is pinned (Dirichlet-type decay): it is
    decoupled from the rest of the grid and damped by its own potential.
    """
    if lam < 0:
        raise ValueError("fiber mode weight must be nonnegative")
    x = mesh.nodes
    f = model.warp.f(x[1:])
    if np.any(f <= 0.0):
        raise AssemblyError("warp function must be positive at every node x_i, i >= 1")
    w = mesh.weights
    F = mesh.face_coefficients
    size = len(x)
    sub = np.zeros(size)
    sup = np.zeros(size)
    sub[1:] = F / w[1:]
    sup[:-1] = F / w[:-1]
    potential = np.zeros(size)
    if lam > 0:
        potential[1:] = -lam / f**2
        # tip potential: use the first face radius so the pinned node decays fast
        potential[0] = -lam / model.warp.f(mesh.faces[0]) ** 2 - sup[0]
        sup[0] = 0.0
        potential[1] -= sub[1]
        sub[1] = 0.0
    diag = potential - sub - sup
    return DiscreteLaplacian(sub=sub, diag=diag, sup=sup, potential=potential,
                             lam=float(lam), weights=w)


def apply(op: TridiagonalOperator, u) -> np.ndarray:
    """``Delta_h u``, evaluated in difference form.

    At a discrete minimum every difference is nonnegative, so the computed
    value is nonnegative in floating point as well.
    """
    u = np.asarray(u, dtype=float)
    if u.shape != (op.size,):
        raise ValueError(f"length mismatch: operator has {op.size} rows, vector has shape {u.shape}")
    out = op.potential * u
    out[1:] += op.sub[1:] * (u[:-1] - u[1:])
    out[:-1] += op.sup[:-1] * (u[1:] - u[:-1])
    return out


def thomas(lower, diag, upper, rhs) -> np.ndarray:
    """Solve a tridiagonal system by forward elimination and back substitution.

    ``lower[i]`` is the coefficient of ``x[i-1]`` in row ``i`` (``lower[0]``
    unused) and ``upper[i]`` that of ``x[i+1]`` (``upper[-1]`` unused).
    """
    n = len(diag)
    c = np.empty(n)
    d = np.empty(n)
    lower = lower.tolist()
    upper = upper.tolist()
    diag = diag.tolist()
    rhs = np.asarray(rhs, dtype=float).tolist()
    piv = diag[0]
    if piv == 0.0:
        raise SingularPivotError("zero pivot in row 0")
    cp = upper[0] / piv
    dp = rhs[0] / piv
    c[0], d[0] = cp, dp
    for i in range(1, n):
        piv = diag[i] - lower[i] * cp
        if piv == 0.0:
            raise SingularPivotError(f"zero pivot in row {i}")
        cp = upper[i] / piv if i < n - 1 else 0.0
        dp = (rhs[i] - lower[i] * dp) / piv
        c[i], d[i] = cp, dp
    x = d
    for i in range(n - 2, -1, -1):
        x[i] -= c[i] * x[i + 1]
    return x


def shifted_system(op: TridiagonalOperator, a, tau: float):
    """Bands of ``I - tau diag(a) Delta_h`` as ``(lower, diag, upper)``."""
    ta = tau * np.asarray(a, dtype=float)
    return -ta * op.sub, 1.0 - ta * op.diag, -ta * op.sup


def solve_shifted(op: TridiagonalOperator, a, tau: float, rhs) -> np.ndarray:
    """Solve ``(I - tau diag(a) Delta_h) v = rhs``.

    The system is checked for (weak, row-wise) diagonal dominance with at
    least one strictly dominant row before elimination.
    """
    a = np.asarray(a, dtype=float)
    rhs = np.asarray(rhs, dtype=float)
    if not tau > 0:
        raise ValueError("tau must be positive")
    if a.shape != (op.size,) or rhs.shape != (op.size,):
        raise ValueError("coefficient and right-hand side must match the operator size")
    if not np.all(a > 0):
        raise ValueError("diffusion coefficient must be positive")
    lower, diag, upper = shifted_system(op, a, tau)
    off = np.abs(lower) + np.abs(upper)
    margin = np.abs(diag) - off
    if np.any(margin < -1e-12 * np.maximum(off, 1.0)) or not np.any(margin > 0):
        bad = int(np.argmin(margin))
        raise DominanceError(f"shifted system not diagonally dominant at row {bad} (tau={tau:g} too large?)")
    return thomas(lower, diag, upper, rhs)


def weighted_inner(mesh_or_weights, u, v) -> float:
    w = getattr(mesh_or_weights, "weights", mesh_or_weights)
    return float(np.dot(w, np.asarray(u) * np.asarray(v)))
