"""Leaves of the Monge-Ampere foliation of a computed geodesic (m = 1).

On strip x torus with coordinates ``(s, z)``, ``s = sigma + i tau``, the
solution is ``u(s, z) = U(tau, z)``.  Its coefficient matrix is

    H00 = U_tt / 4,   H01 = u_{s zbar} = -(i/2) U_{t zbar},
    H10 = conj(H01),  H11 = 1 + U_{z zbar},

and a leaf ``s -> (s, f(s))`` solves ``H01 + H11 f' = 0`` (the fiber rows
of ``sum_j H_jk X_j = 0`` with ``X = (1, f')``).  For epsilon-solutions the
strip row does not vanish; its residual ``det H / H11`` is reported.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from typing import List, Optional, Sequence

import numpy as np

from .errors import DefectiveM, LeftChart, SingularFiberBlock, ValidationError
from .geodesic_solver import GeodesicSolution
from .linear_model import propagate_expm, solve_ivp
from .matrix_core import BlockSystem, fix_phase
from .torus import wirtinger

MAX_STEP = 0.01
CHART_RADIUS = 1.0


def kernel_direction(H) -> tuple:
    """Unit ``X`` minimizing ``|sum_j H_jk X_j|`` and the attained eigenvalue.

    This is the eigenvector of ``H^T`` for its smallest eigenvalue, with the
    first non-negligible component made real and positive.
    """
    H = np.asarray(H, dtype=complex)
    w, V = np.linalg.eigh(0.5 * (H.T + H.conj()))
    v = fix_phase(V[:, 0])
    return v / np.linalg.norm(v), float(w[0])


def _time_derivatives(U: np.ndarray, dt: float):
    """Second-order ``d/dt`` and ``d^2/dt^2`` on all levels (one-sided at the ends)."""
    d1 = np.gradient(U, dt, axis=0, edge_order=2)
    d2 = np.empty_like(U)
    d2[1:-1] = (U[2:] - 2 * U[1:-1] + U[:-2]) / dt**2
    d2[0] = (2 * U[0] - 5 * U[1] + 4 * U[2] - U[3]) / dt**2
    d2[-1] = (2 * U[-1] - 5 * U[-2] + 4 * U[-3] - U[-4]) / dt**2
    return d1, d2


class CoefficientField:
    """Strip coefficient matrix on the (t, grid) lattice with smooth interpolation.

    Interpolation is cubic Lagrange in ``t`` and trigonometric in space.
    """

    def __init__(self, sol: GeodesicSolution):
        torus = sol.torus
        if torus.m != 1:
            raise ValidationError("foliation analysis supports m = 1 only")
        self.torus = torus
        U = sol.u
        self.nt1 = U.shape[0]
        self.dt = 1.0 / (self.nt1 - 1)
        Ut, Utt = _time_derivatives(U, self.dt)
        self.fields = {
            "H00": Utt / 4.0 + 0j,
            "H01": -0.5j * wirtinger(Ut, torus, (0,), (1,)),
            "H11": 1.0 + wirtinger(U, torus, (1,), (1,)),
            "u_s": -0.5j * Ut + 0j,
            "u_z": wirtinger(U, torus, (1,), (0,)),
        }
        N = torus.N
        self._coef = {k: np.fft.fft2(v) / N**2 for k, v in self.fields.items()}
        self._k = torus.wavenumbers()

    def matrix(self, level: int, index) -> np.ndarray:
        f = self.fields
        h01 = f["H01"][(level,) + tuple(index)]
        return np.array(
            [[f["H00"][(level,) + tuple(index)], h01], [np.conj(h01), f["H11"][(level,) + tuple(index)]]]
        )

    def _time_weights(self, tau: float):
        x = float(np.clip(tau, 0.0, 1.0)) / self.dt
        i0 = int(np.clip(np.floor(x) - 1, 0, self.nt1 - 4))
        nodes = np.arange(i0, i0 + 4)
        w = np.ones(4)
        for j in range(4):
            for k in range(4):
                if k != j:
                    w[j] *= (x - nodes[k]) / (nodes[j] - nodes[k])
        return i0, w

    def evaluate(self, name: str, tau: float, z) -> np.ndarray:
        """Interpolated field ``name`` at time ``tau`` and complex points ``z``."""
        z = np.asarray(z, dtype=complex)
        i0, w = self._time_weights(tau)
        C = np.tensordot(w, self._coef[name][i0 : i0 + 4], axes=1)
        Ex = np.exp(1j * np.multiply.outer(z.real.ravel(), self._k))
        Ey = np.exp(1j * np.multiply.outer(z.imag.ravel(), self._k))
        return np.einsum("pk,kl,pl->p", Ex, C, Ey).reshape(z.shape)

    def slope(self, tau: float, z) -> np.ndarray:
        """``f' = -H01 / H11`` at ``(tau, z)``."""
        h11 = self.evaluate("H11", tau, z).real
        if np.min(h11) <= 1e-12:
            raise SingularFiberBlock(f"fiber block not positive at tau={tau:.4g}")
        return -self.evaluate("H01", tau, z) / h11

    def kernel_residual(self, tau: float, z) -> np.ndarray:
        """Normalized strip-row residual ``|H00 + H10 f'| / |(1, f')|``."""
        fp = self.slope(tau, z)
        h00 = self.evaluate("H00", tau, z)
        h10 = np.conj(self.evaluate("H01", tau, z))
        return np.abs(h00 + h10 * fp) / np.sqrt(1 + np.abs(fp) ** 2)


@dataclass
class LeafTrace:
    """Leaf through ``(0, start)`` sampled on ``sigma x tau`` (rows: tau, columns: sigma)."""

    start: complex
    center: complex
    s: np.ndarray
    f: np.ndarray
    kernel_residuals: np.ndarray
    hol_residual: float = float("nan")

    def samples(self) -> List[tuple]:
        """``(s, f(s))`` along the horizontal path, then each vertical column."""
        out = [(complex(s), complex(f)) for s, f in zip(self.s[0], self.f[0])]
        for j in range(self.s.shape[1]):
            out.extend((complex(s), complex(f)) for s, f in zip(self.s[1:, j], self.f[1:, j]))
        return out

    def drift(self) -> float:
        return float(np.abs(self.f - self.f[0, self.s.shape[1] // 2]).max())

    def to_dict(self) -> dict:
        return {
            "start": [self.start.real, self.start.imag],
            "sigma": self.s[0].real.tolist(),
            "tau": self.s[:, 0].imag.tolist(),
            "f": [[[v.real, v.imag] for v in row] for row in self.f],
            "holResidual": self.hol_residual,
            "maxKernelResidual": float(np.max(self.kernel_residuals)),
            "drift": self.drift(),
        }


def _wrap(d: complex, L: float) -> complex:
    return complex((d.real + L / 2) % L - L / 2, (d.imag + L / 2) % L - L / 2)


def _rk4(fun, y, h):
    k1 = fun(0.0, y)
    k2 = fun(0.5 * h, y + 0.5 * h * k1)
    k3 = fun(0.5 * h, y + 0.5 * h * k2)
    k4 = fun(h, y + h * k3)
    return y + h / 6.0 * (k1 + 2 * k2 + 2 * k3 + k4)


def trace_leaf(
    sol: GeodesicSolution,
    a: complex,
    r: float = 0.1,
    x0: complex = 0j,
    step: float = MAX_STEP,
    vertical: bool = True,
    coeff: Optional[CoefficientField] = None,
) -> LeafTrace:
    """Integrate the leaf through ``(0, a)`` over ``[-r, r] x [0, 1]`` with RK4.

    First along ``tau = 0`` in both sigma directions, then upward from every
    horizontal sample (``df/dtau = i f'``).  All columns share the same tau.
    """
    if not 0 < step <= MAX_STEP:
        raise ValidationError(f"step must lie in (0, {MAX_STEP}]")
    if r < 0:
        raise ValidationError("r must be nonnegative")
    coeff = CoefficientField(sol) if coeff is None else coeff
    L = sol.torus.L
    a = complex(np.ravel(a)[0])
    offset = _wrap(a - x0, L)
    if abs(offset) >= CHART_RADIUS:
        raise ValidationError(f"start {a} lies outside the chart around {x0}")
    center = a - offset

    def check(f):
        if np.max(np.abs(f - center)) > CHART_RADIUS:
            raise LeftChart(f"leaf from {a} left the chart ball around {x0}")

    ns = int(np.ceil(r / step - 1e-12))
    hs = r / ns if ns else 0.0
    right, left = [a], [a]
    for _ in range(ns):
        right.append(complex(_rk4(lambda _, y: coeff.slope(0.0, y), np.array(right[-1]), hs)))
        left.append(complex(_rk4(lambda _, y: coeff.slope(0.0, y), np.array(left[-1]), -hs)))
    row0 = np.array(left[:0:-1] + right)
    check(row0)
    sigma = hs * np.arange(-ns, ns + 1)
    rows, taus = [row0], [0.0]
    if vertical:
        nt = int(np.ceil(1.0 / step - 1e-12))
        ht = 1.0 / nt
        f = row0.copy()
        for k in range(nt):
            t0 = k * ht
            f = _rk4(lambda d, y: 1j * coeff.slope(t0 + d, y), f, ht)
            check(f)
            rows.append(f)
            taus.append((k + 1) * ht)
    F = np.array(rows)
    taus = np.array(taus)
    S = sigma[None, :] + 1j * taus[:, None]
    kres = np.array([coeff.kernel_residual(t, F[i]) for i, t in enumerate(taus)])
    trace = LeafTrace(a, center, S, F, kres)
    if vertical and F.shape[0] >= 3 and F.shape[1] >= 3:
        trace.hol_residual = holomorphy_residual(sol, trace, coeff)
    return trace


def holomorphy_residual(sol: GeodesicSolution, trace: LeafTrace, coeff: Optional[CoefficientField] = None) -> float:
    """Max ``|dbar_s g_j|`` over interior patch points, ``j = 0, 1``.

    ``g_0 = u_s(s, f)`` and ``g_1 = w_z(f) + u_z(s, f)`` with ``w = |z - center|^2``.
    """
    coeff = CoefficientField(sol) if coeff is None else coeff
    S, F = trace.s, trace.f
    if S.shape[0] < 3 or S.shape[1] < 3:
        raise ValidationError("holomorphy residual needs a two-dimensional patch")
    taus = S[:, 0].imag
    g0 = np.array([coeff.evaluate("u_s", t, F[i]) for i, t in enumerate(taus)])
    g1 = np.array([coeff.evaluate("u_z", t, F[i]) for i, t in enumerate(taus)]) + np.conj(F - trace.center)
    hs = S[0, 1].real - S[0, 0].real
    ht = taus[1] - taus[0]
    worst = 0.0
    for g in (g0, g1):
        gs = (g[1:-1, 2:] - g[1:-1, :-2]) / (2 * hs)
        gt = (g[2:, 1:-1] - g[:-2, 1:-1]) / (2 * ht)
        worst = max(worst, float(np.abs(0.5 * (gs + 1j * gt)).max()))
    return worst


@dataclass
class LinearizationExtract:
    A: np.ndarray
    B: np.ndarray
    P: np.ndarray
    Q: np.ndarray
    structure_residuals: dict = field(default_factory=dict)

    def block_system(self) -> BlockSystem:
        """Block system from the structured parts of ``A`` and ``B``."""
        A = 0.5 * (self.A - self.A.conj().T)
        B = 0.5 * (self.B + self.B.T)
        return BlockSystem(A, B)

    def to_dict(self) -> dict:
        def enc(M):
            return [[[complex(v).real, complex(v).imag] for v in row] for row in np.atleast_2d(M)]

        return {
            "A": enc(self.A),
            "B": enc(self.B),
            "P": enc(self.P),
            "Q": enc(self.Q),
            "structureResiduals": self.structure_residuals,
        }


def extract_linearization(sol: GeodesicSolution, x0_index: Sequence[int] = (0, 0)) -> LinearizationExtract:
    """``P, Q`` at ``(t = 1, x0)`` and ``A = (i/2) U_{t z zbar}``, ``B = (i/2) U_{t zbar zbar}`` at ``(0, x0)``."""
    torus = sol.torus
    if torus.m != 1:
        raise ValidationError("extraction supports m = 1 only")
    idx = tuple(int(i) for i in x0_index)
    U = sol.u
    dt = 1.0 / (U.shape[0] - 1)
    Ut0 = (-3 * U[0] + 4 * U[1] - U[2]) / (2 * dt)
    A = np.array([[0.5j * wirtinger(Ut0, torus, (1,), (1,))[idx]]])
    B = np.array([[0.5j * wirtinger(Ut0, torus, (0,), (2,))[idx]]])
    P = np.array([[1.0 + wirtinger(U[-1], torus, (1,), (1,))[idx]]])
    Q = np.array([[wirtinger(U[-1], torus, (2,), (0,))[idx]]])
    res = {
        "A": float(np.abs(A + A.conj().T).max()),
        "B": float(np.abs(B - B.T).max()),
        "P": float(np.abs(P - P.conj().T).max()),
        "Q": float(np.abs(Q - Q.T).max()),
    }
    return LinearizationExtract(A, B, P, Q, res)


def cross_validate_linearization(
    sol: GeodesicSolution,
    extract: LinearizationExtract,
    a,
    dt: float = 0.05,
    r: float = 0.25,
    x0: complex = 0j,
    coeff: Optional[CoefficientField] = None,
) -> float:
    """``max |(f_{x0 + dt a}(sigma) - x0) / dt - phi(sigma)|`` over real ``sigma in [-r, r]``.

    ``phi`` solves the linear system of ``extract`` with ``phi(0) = a``, by
    eigenmodes, or by the matrix exponential when ``M`` is defective (data
    depending on one real coordinate gives ``A = B`` and a nilpotent ``M``).
    The strip component of ``phi`` vanishes identically because every leaf
    is a graph ``s -> (s, f(s))`` whatever its starting point.
    """
    if not 0 < dt <= 0.1:
        raise ValidationError(f"dt must lie in (0, 0.1], got {dt}")
    a = complex(np.ravel(a)[0])
    trace = trace_leaf(sol, x0 + dt * a, r=r, x0=x0, vertical=False, coeff=coeff)
    sigma = trace.s[0].real
    bs = extract.block_system()
    try:
        phi = solve_ivp(bs, [a])(sigma + 0j)[:, 0]
    except DefectiveM:
        phi = propagate_expm(bs, [a], sigma)[:, 0]
    lin = (trace.f[0] - x0) / dt
    return float(np.abs(lin - phi).max())


def trace_many(sol: GeodesicSolution, starts: Sequence[complex], **kwargs) -> List[LeafTrace]:
    """Trace several leaves sharing one coefficient field."""
    coeff = kwargs.pop("coeff", None) or CoefficientField(sol)
    return [trace_leaf(sol, a, coeff=coeff, **kwargs) for a in starts]
