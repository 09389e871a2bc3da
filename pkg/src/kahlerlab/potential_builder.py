"""Counterexample boundary potentials with a prescribed Hessian at a fixed point.

The potential is ``v = psi(|z|^2) w`` in the chart around the fixed point and
zero elsewhere, where ``w`` is the quadratic with complex Hessian
``(w_{z zbar}, w_{zz}) = (a, b)`` and ``psi(t) = phi(eps log t)`` is a
logarithmically tempered cutoff.  Small ``eps`` keeps ``t psi'`` and
``t^2 psi''`` of order ``eps``, which is what preserves plurisubharmonicity.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import Optional, Sequence, Tuple

import numpy as np

from .errors import NoEpsilonFound, NotPsh, ValidationError
from .matrix_core import (
    HessianPair,
    is_hermitian,
    is_symmetric,
    min_hermitian_eig,
    obstruction_certificate,
)
from .torus import ScalarField, TorusSpec, fixed_points, levi_matrix, spectral_partial

CHART_RADIUS = 1.5


def real_hessian(a, b) -> np.ndarray:
    """Real Hessian (axis order x1, y1, ...) of ``sum a_jk z_j zbar_k + Re sum b_jk z_j z_k``."""
    a = np.atleast_2d(np.asarray(a, dtype=complex))
    b = np.atleast_2d(np.asarray(b, dtype=complex))
    m = a.shape[0]

    def w(xi):
        z = xi[0::2] + 1j * xi[1::2]
        return (z @ a @ z.conj()).real + (z @ b @ z).real

    E = np.eye(2 * m)
    S = np.empty((2 * m, 2 * m))
    for i in range(2 * m):
        for j in range(2 * m):
            S[i, j] = 0.5 * (w(E[i] + E[j]) - w(E[i]) - w(E[j]))
    return 2.0 * S


def complex_hessian(H) -> Tuple[np.ndarray, np.ndarray]:
    """``(u_{z_j zbar_k}, u_{z_j z_k})`` from a real Hessian in axis order x1, y1, ..."""
    H = np.asarray(H, dtype=float)
    X = H[0::2, 0::2]
    Y = H[1::2, 1::2]
    XY = H[0::2, 1::2]
    YX = H[1::2, 0::2]
    mixed = 0.25 * (X + Y + 1j * (XY - YX))
    pure = 0.25 * (X - Y - 1j * (XY + YX))
    return mixed, pure


def hermitian_part(q) -> np.ndarray:
    """Coefficient matrix of the J-invariant part of a real quadratic form.

    ``q`` is either the pair ``(a, b)`` of ``q = sum a dz dzbar + Re sum b dz dz``
    or a real symmetric 2m x 2m matrix ``S`` with ``q(xi) = xi^T S xi``.
    """
    if isinstance(q, tuple):
        return np.atleast_2d(np.asarray(q[0], dtype=complex))
    S = np.asarray(q, dtype=float)
    # q as a function has real Hessian 2S
    return complex_hessian(2.0 * S)[0]


@dataclass(frozen=True, eq=False)
class QuadraticFormSpec:
    """Target complex Hessian at the fixed point: ``v_{z zbar} = a``, ``v_{zz} = b``."""

    a: np.ndarray
    b: np.ndarray

    def __post_init__(self):
        a = np.atleast_2d(np.asarray(self.a, dtype=complex))
        b = np.atleast_2d(np.asarray(self.b, dtype=complex))
        if a.shape != b.shape or a.shape[0] != a.shape[1]:
            raise ValidationError(f"a and b must be square of equal shape, got {a.shape}, {b.shape}")
        if not is_hermitian(a):
            raise ValidationError("a must be Hermitian")
        if not is_symmetric(b):
            raise ValidationError("b must be symmetric")
        if min_hermitian_eig(np.eye(a.shape[0]) + a) <= 0:
            raise ValidationError("positivity hypothesis violated: I + a must be positive definite")
        object.__setattr__(self, "a", a)
        object.__setattr__(self, "b", b)

    @property
    def m(self) -> int:
        return self.a.shape[0]

    @classmethod
    def from_real_form(cls, S) -> "QuadraticFormSpec":
        """Spec whose potential has real Hessian ``S``."""
        return cls(*complex_hessian(S))

    def hessian_pair(self) -> HessianPair:
        return HessianPair(np.eye(self.m) + self.a, self.b)

    def real_hessian(self) -> np.ndarray:
        return real_hessian(self.a, self.b)


def _smoothstep(x):
    return x**3 * (10 - 15 * x + 6 * x**2)


def _smoothstep_d1(x):
    return 30 * x**2 * (1 - x) ** 2


def _smoothstep_d2(x):
    return 60 * x * (1 - x) * (1 - 2 * x)


@dataclass(frozen=True)
class CutoffProfile:
    """``psi(t) = phi(eps log t)`` with ``phi`` a monotone quintic step from 1 (s < -1) to 0 (s > 0)."""

    epsilon: float
    bound_t_dpsi: float = field(default=np.nan, compare=False)
    bound_t2_d2psi: float = field(default=np.nan, compare=False)

    def __post_init__(self):
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if np.isnan(self.bound_t_dpsi):
            b1, b2 = self._measure_bounds()
            object.__setattr__(self, "bound_t_dpsi", b1)
            object.__setattr__(self, "bound_t2_d2psi", b2)

    @staticmethod
    def phi(s):
        s = np.asarray(s, dtype=float)
        x = np.clip(s + 1.0, 0.0, 1.0)
        return 1.0 - _smoothstep(x)

    @staticmethod
    def dphi(s):
        s = np.asarray(s, dtype=float)
        inside = (s > -1.0) & (s < 0.0)
        return np.where(inside, -_smoothstep_d1(np.clip(s + 1.0, 0, 1)), 0.0)

    @staticmethod
    def d2phi(s):
        s = np.asarray(s, dtype=float)
        inside = (s > -1.0) & (s < 0.0)
        return np.where(inside, -_smoothstep_d2(np.clip(s + 1.0, 0, 1)), 0.0)

    def _s(self, t):
        t = np.asarray(t, dtype=float)
        with np.errstate(divide="ignore"):
            return self.epsilon * np.log(t)

    def psi(self, t):
        return self.phi(self._s(t))

    def t_dpsi(self, t):
        """``t psi'(t)``."""
        return self.epsilon * self.dphi(self._s(t))

    def t2_d2psi(self, t):
        """``t^2 psi''(t)``."""
        s = self._s(t)
        e = self.epsilon
        return e * e * self.d2phi(s) - e * self.dphi(s)

    def dpsi(self, t):
        t = np.asarray(t, dtype=float)
        return self.t_dpsi(t) / t

    def d2psi(self, t):
        t = np.asarray(t, dtype=float)
        return self.t2_d2psi(t) / t**2

    def flat_radius(self) -> float:
        """``psi(|z|^2) = 1`` for ``|z|`` below this radius."""
        return float(np.exp(-0.5 / self.epsilon))

    def _measure_bounds(self):
        # log-uniform sampling of the transition layer exp(-1/eps) < t < 1
        t = np.exp(np.linspace(-1.0, 0.0, 20001) / self.epsilon)
        return float(np.max(np.abs(self.t_dpsi(t)))), float(np.max(np.abs(self.t2_d2psi(t))))

    @property
    def bound_constant(self) -> float:
        """Measured ``C`` with ``t|psi'|, t^2|psi''| <= C eps``."""
        return max(self.bound_t_dpsi, self.bound_t2_d2psi) / self.epsilon


@dataclass(frozen=True, eq=False)
class BuiltPotential:
    field: ScalarField
    spec: QuadraticFormSpec
    cutoff: CutoffProfile
    psh_margin: float
    hessian_error: float
    x0: Tuple[complex, ...]
    x0_index: Tuple[int, ...]
    fd_hessian: np.ndarray
    gradient_at_x0: float

    def measured_pair(self) -> Tuple[np.ndarray, np.ndarray]:
        """``(P, Q)`` read off the finite-difference Hessian at the fixed point."""
        mixed, pure = complex_hessian(self.fd_hessian)
        return np.eye(self.spec.m) + mixed, pure

    def report(self) -> dict:
        P, Q = self.measured_pair()
        target = self.spec.hessian_pair()
        verdict = obstruction_certificate(target).verdict.value
        try:
            measured_verdict = obstruction_certificate(HessianPair(P, Q, tol=1e-6)).verdict.value
        except ValidationError:
            measured_verdict = None
        return {
            "epsilon": self.cutoff.epsilon,
            "pshMargin": self.psh_margin,
            "hessianError": self.hessian_error,
            "P": _cplx(P),
            "Q": _cplx(Q),
            "targetP": _cplx(target.P),
            "targetQ": _cplx(target.Q),
            "verdict": verdict,
            "measuredVerdict": measured_verdict,
            "cutoffBounds": {
                "tDpsi": self.cutoff.bound_t_dpsi,
                "t2D2psi": self.cutoff.bound_t2_d2psi,
                "C": self.cutoff.bound_constant,
            },
            "flatRadius": self.cutoff.flat_radius(),
            "gridSpacing": self.field.spec.h,
            "gradientAtX0": self.gradient_at_x0,
        }


def _cplx(M):
    return [[[float(z.real), float(z.imag)] for z in row] for row in np.atleast_2d(M)]


def _locate_fixed_point(torus: TorusSpec, x0) -> Tuple[Tuple[complex, ...], Tuple[int, ...]]:
    fps = fixed_points(torus)
    if x0 is None:
        return fps.points[0], fps.indices[0]
    x0 = tuple(complex(c) for c in np.atleast_1d(x0))
    for p, idx in zip(fps.points, fps.indices):
        if len(p) == len(x0) and all(abs(pi - xi) < 1e-12 for pi, xi in zip(p, x0)):
            return p, idx
    raise ValidationError(f"x0={x0} is not a fixed point of z -> -z on this torus")


def local_quadratic(spec: QuadraticFormSpec, torus: TorusSpec, x0=None) -> ScalarField:
    """``w = sum a_jk z_j zbar_k + Re sum b_jk z_j z_k`` on the chart ``|z| < 1.5``, zero outside."""
    if spec.m != torus.m:
        raise ValidationError(f"quadratic data has m={spec.m}, torus has m={torus.m}")
    x0, _ = _locate_fixed_point(torus, x0)
    z = torus.chart(x0)
    return ScalarField(torus, _quadratic_values(spec, z, CHART_RADIUS))


def _quadratic_values(spec: QuadraticFormSpec, z, radius) -> np.ndarray:
    m = spec.m
    shape = np.broadcast_shapes(*(zj.shape for zj in z))
    w = np.zeros(shape)
    for j in range(m):
        for k in range(m):
            w = w + (spec.a[j, k] * z[j] * np.conj(z[k])).real + (spec.b[j, k] * z[j] * z[k]).real
    r2 = sum(np.abs(zj) ** 2 for zj in z)
    return np.where(r2 < radius**2, w, 0.0)


def fd_hessian(values: np.ndarray, idx: Sequence[int], h: float) -> np.ndarray:
    """Centered second differences at a grid index (periodic wrap)."""
    n = values.ndim
    N = values.shape

    def at(offset):
        return values[tuple((i + o) % Nk for i, o, Nk in zip(idx, offset, N))]

    H = np.empty((n, n))
    c = at([0] * n)
    for i in range(n):
        e = [0] * n
        e[i] = 1
        H[i, i] = (at(e) - 2 * c + at([-v for v in e])) / h**2
        for j in range(i + 1, n):
            pp = [0] * n
            pp[i], pp[j] = 1, 1
            pm = [0] * n
            pm[i], pm[j] = 1, -1
            val = (at(pp) - at(pm) - at([-v for v in pm]) + at([-v for v in pp])) / (4 * h**2)
            H[i, j] = H[j, i] = val
    return H


def psh_margin(values: np.ndarray, torus: TorusSpec) -> float:
    """Minimum over the grid of the smallest eigenvalue of ``I + (v_{z_j zbar_k})``."""
    levi = levi_matrix(values, torus)
    if torus.m == 1:
        return float(1.0 + levi[..., 0, 0].real.min())
    return float(np.linalg.eigvalsh(np.eye(torus.m) + levi)[..., 0].min())


def _build(spec: QuadraticFormSpec, cutoff: CutoffProfile, torus: TorusSpec, x0) -> BuiltPotential:
    if spec.m != torus.m:
        raise ValidationError(f"quadratic data has m={spec.m}, torus has m={torus.m}")
    x0, idx = _locate_fixed_point(torus, x0)
    z = torus.chart(x0)
    r2 = sum(np.abs(zj) ** 2 for zj in z)
    w = _quadratic_values(spec, z, CHART_RADIUS)
    with np.errstate(divide="ignore"):
        cut = np.where(r2 < 1.0, cutoff.psi(np.maximum(r2, 1e-300)), 0.0)
    values = cut * w
    f = ScalarField(torus, values)
    margin = psh_margin(f.values, torus)
    H = fd_hessian(f.values, idx, torus.h)
    err = float(np.max(np.abs(H - spec.real_hessian())))
    grad = 0.0
    for ax in range(torus.ndim):
        orders = [0] * torus.ndim
        orders[ax] = 1
        grad = max(grad, abs(spectral_partial(f.values, torus, orders)[idx]))
    return BuiltPotential(f, spec, cutoff, margin, err, x0, idx, H, float(grad))


def assemble_potential(
    spec: QuadraticFormSpec, cutoff: CutoffProfile, torus: TorusSpec, x0=None
) -> BuiltPotential:
    """Glue the local quadratic into the torus with the cutoff; raises NotPsh if positivity fails."""
    built = _build(spec, cutoff, torus, x0)
    if built.psh_margin <= 0:
        raise NotPsh(
            f"pshMargin={built.psh_margin:.4g} <= 0 at epsilon={cutoff.epsilon}; decrease epsilon"
        )
    return built


def select_epsilon(
    spec: QuadraticFormSpec, torus: TorusSpec, x0=None, margin: float = 0.1, max_halvings: int = 20
) -> CutoffProfile:
    """Halve epsilon from 0.5 until the built potential has ``pshMargin >= margin``."""
    top = min_hermitian_eig(np.eye(spec.m) + spec.a)
    if not 0 < margin < top:
        raise ValidationError(f"margin must lie in (0, {top:.6g}), got {margin}")
    eps = 0.5
    for _ in range(max_halvings + 1):
        cutoff = CutoffProfile(eps)
        if _build(spec, cutoff, torus, x0).psh_margin >= margin:
            return cutoff
        eps *= 0.5
    raise NoEpsilonFound(f"no epsilon >= {eps * 2:.3g} gives pshMargin >= {margin}")


def build_potential(
    a, b, torus: TorusSpec, margin: float = 0.1, x0=None
) -> BuiltPotential:
    """Convenience pipeline: validate data, select epsilon, assemble."""
    spec = QuadraticFormSpec(a, b)
    cutoff = select_epsilon(spec, torus, x0, margin)
    return assemble_potential(spec, cutoff, torus, x0)
