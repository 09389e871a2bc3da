"""Regularized geodesic between the zero potential and ``v`` on a flat torus (m = 1).

A curve of potentials ``t -> u(t, .)`` is a geodesic when
``u_tt (1 + u_{z zbar}) - |u_{tz}|^2 = 0``; this is the determinant of the
complex Hessian of ``u(s, x) = u(Im s, x)`` on strip x torus, up to a
factor 4.  The solver replaces the right-hand side by ``epsilon > 0`` and
runs damped Newton-Krylov on the full space-time grid (centered differences
in ``t``, spectral in space), continuing in ``epsilon`` from 0.5 downward.
"""

from __future__ import annotations

import csv
import io
import logging
import struct
from math import comb
from dataclasses import dataclass, field, replace
from pathlib import Path
from typing import List, Optional, Sequence

import numpy as np
from scipy.sparse.linalg import LinearOperator, gmres

from .errors import DegenerateMetric, NoConvergence, NumericalError, PositivityLoss, ValidationError
from .potential_builder import BuiltPotential, psh_margin
from .torus import (
    ScalarField,
    TorusSpec,
    read_field_stream,
    reflect_values,
    spectral_partial,
    wirtinger,
    wirtinger_symbol,
    write_field_stream,
)

log = logging.getLogger(__name__)

SOLUTION_HEADER = struct.Struct("<qdqqd")
POSITIVITY_TOL = 1e-12


@dataclass(frozen=True)
class SolverConfig:
    newton_tol: float = 1e-10
    max_iter: int = 40
    armijo: float = 1e-4
    min_step: float = 2.0**-12
    continuation_start: float = 0.5
    continuation_ratio: float = 0.5
    intermediate_tol: float = 1e-7
    initial_guess: str = "linear"
    gmres_restart: int = 80
    gmres_maxiter: int = 20

    def __post_init__(self):
        if not self.newton_tol > 0:
            raise ValidationError("newton_tol must be positive")
        if not 0 < self.continuation_ratio < 1:
            raise ValidationError("continuation_ratio must lie in (0, 1)")
        if self.initial_guess not in ("linear", "prior"):
            raise ValidationError("initial_guess must be 'linear' or 'prior'")

    def schedule(self, target: float, start: Optional[float] = None) -> List[float]:
        """Strictly decreasing epsilon levels ending at ``target``."""
        eps = self.continuation_start if start is None else start
        levels = []
        while eps > target * (1 + 1e-12):
            levels.append(eps)
            eps *= self.continuation_ratio
        levels.append(target)
        return levels


@dataclass(frozen=True, eq=False)
class GeodesicProblem:
    torus: TorusSpec
    v: ScalarField
    epsilon: float
    nt: int = 16

    def __post_init__(self):
        v = self.v.field if isinstance(self.v, BuiltPotential) else self.v
        object.__setattr__(self, "v", v)
        if self.torus.m != 1:
            raise ValidationError("the geodesic solver supports m = 1 only")
        if v.spec != self.torus:
            raise ValidationError("boundary field lives on a different torus grid")
        if not self.epsilon > 0:
            raise ValidationError(f"epsilon must be positive, got {self.epsilon}")
        if self.nt < 8:
            raise ValidationError(f"nt must be >= 8, got {self.nt}")
        margin = psh_margin(v.values, self.torus)
        if margin <= 0:
            raise ValidationError(f"boundary potential is not strongly psh (pshMargin={margin:.4g})")

    @property
    def times(self) -> np.ndarray:
        return np.linspace(0.0, 1.0, self.nt + 2)

    @property
    def dt(self) -> float:
        return 1.0 / (self.nt + 1)

    def with_epsilon(self, epsilon: float) -> "GeodesicProblem":
        return replace(self, epsilon=epsilon)

    def linear_guess(self) -> np.ndarray:
        return self.times[:, None, None] * self.v.values[None]


@dataclass(eq=False)
class GeodesicSolution:
    problem: GeodesicProblem
    u: np.ndarray
    residual_norm: float
    newton_iterations: int
    history: list = field(default_factory=list)

    @property
    def epsilon(self) -> float:
        return self.problem.epsilon

    @property
    def torus(self) -> TorusSpec:
        return self.problem.torus

    def report(self, newton_tol: Optional[float] = None) -> dict:
        return {
            "m": self.torus.m,
            "L": self.torus.L,
            "N": self.torus.N,
            "Nt": self.problem.nt,
            "epsilon": self.epsilon,
            "residualNorm": self.residual_norm,
            "newtonIterations": self.newton_iterations,
            "normLadder": norm_ladder(self),
            "thirdDerivDiagnostic": third_deriv_diagnostic(self),
            "symmetry": symmetry_check(self),
            "minFiberPositivity": float(fiber_positivity(self.u[1:-1], self.torus).min()),
            "continuation": self.history,
        }


def metric_length_sq(omega, f, tol: float = POSITIVITY_TOL) -> np.ndarray:
    """Pointwise ``sum_jk Omega^{jk} f_j conj(f_k)`` with ``(Omega^{jk})`` the inverse matrix.

    ``omega`` has shape ``(..., m, m)``, ``f`` has shape ``(..., m)``.
    """
    omega = np.asarray(omega, dtype=complex)
    f = np.asarray(f, dtype=complex)
    herm = 0.5 * (omega + np.conj(np.swapaxes(omega, -1, -2)))
    if np.linalg.eigvalsh(herm)[..., 0].min() <= tol:
        raise DegenerateMetric("metric coefficient matrix is not positive definite")
    inv = np.linalg.inv(omega)
    return np.einsum("...j,...jk,...k->...", f, inv, f.conj()).real


def fiber_positivity(levels: np.ndarray, torus: TorusSpec) -> np.ndarray:
    """``1 + u_{z zbar}`` on each level."""
    return 1.0 + wirtinger(levels, torus, (1,), (1,)).real


def geodesic_residual(u: np.ndarray, epsilon: float, torus: TorusSpec) -> np.ndarray:
    """``u_tt (1 + u_{z zbar}) - |u_{tz}|^2 - epsilon`` on interior levels.

    ``u`` holds all levels including the boundaries ``t = 0`` and ``t = 1``.
    """
    u = np.asarray(u, dtype=float)
    dt = 1.0 / (u.shape[0] - 1)
    inner = u[1:-1]
    omega = fiber_positivity(inner, torus)
    if omega.min() <= POSITIVITY_TOL:
        raise DegenerateMetric(f"fiberwise positivity lost: min(1 + u_zzbar) = {omega.min():.3g}")
    utt = (u[2:] - 2 * inner + u[:-2]) / dt**2
    utz = wirtinger((u[2:] - u[:-2]) / (2 * dt), torus, (1,), (0,))
    return utt * omega - np.abs(utz) ** 2 - epsilon


class _Linearization:
    """Jacobian of the discrete residual at ``u`` and its FFT/tridiagonal preconditioner."""

    def __init__(self, u: np.ndarray, torus: TorusSpec):
        self.torus = torus
        self.nt = u.shape[0] - 2
        self.dt = 1.0 / (self.nt + 1)
        self.shape = u[1:-1].shape
        inner = u[1:-1]
        self.c1 = fiber_positivity(inner, torus)
        self.c2 = (u[2:] - 2 * inner + u[:-2]) / self.dt**2
        self.g = wirtinger((u[2:] - u[:-2]) / (2 * self.dt), torus, (1,), (0,))
        self.sym_lap = wirtinger_symbol(torus, (1,), (1,))
        self.sym_dz = wirtinger_symbol(torus, (1,), (0,))
        self._setup_preconditioner()

    def matvec(self, x: np.ndarray) -> np.ndarray:
        d = x.reshape(self.shape)
        dt = self.dt
        pad = np.zeros((self.nt + 2,) + self.shape[1:])
        pad[1:-1] = d
        d2 = (pad[2:] - 2 * d + pad[:-2]) / dt**2
        F = np.fft.fft2(pad)
        lap = np.fft.ifft2(F[1:-1] * self.sym_lap).real
        dtz = np.fft.ifft2((F[2:] - F[:-2]) / (2 * dt) * self.sym_dz)
        out = self.c1 * d2 + self.c2 * lap - 2.0 * (np.conj(self.g) * dtz).real
        return out.ravel()

    def _setup_preconditioner(self):
        dt = self.dt
        a = self.c1.mean(axis=(1, 2))
        b = np.maximum(self.c2.mean(axis=(1, 2)), 0.0)
        lam = self.sym_lap.real  # -|k|^2 / 4
        nt = self.nt
        self.sub = np.broadcast_to((a / dt**2)[:, None, None], (nt,) + lam.shape)
        self.diag = (-2 * a / dt**2)[:, None, None] + b[:, None, None] * lam[None]
        self.sup = self.sub

    def precondition(self, r: np.ndarray) -> np.ndarray:
        R = np.fft.fft2(r.reshape(self.shape))
        X = _thomas(self.sub, self.diag, self.sup, R)
        return np.fft.ifft2(X).real.ravel()

    def solve(self, rhs: np.ndarray, rtol: float, restart: int, maxiter: int) -> np.ndarray:
        n = rhs.size
        A = LinearOperator((n, n), matvec=self.matvec, dtype=float)
        M = LinearOperator((n, n), matvec=self.precondition, dtype=float)
        x, info = gmres(A, rhs.ravel(), rtol=rtol, atol=0.0, restart=restart, maxiter=maxiter, M=M)
        if info < 0:
            raise NoConvergence("GMRES breakdown")
        return x.reshape(self.shape)


def _thomas(sub, diag, sup, rhs):
    """Batched tridiagonal solve along axis 0 (diagonally dominant systems)."""
    n = rhs.shape[0]
    cp = np.empty(rhs.shape, dtype=complex)
    dp = np.empty(rhs.shape, dtype=complex)
    cp[0] = sup[0] / diag[0]
    dp[0] = rhs[0] / diag[0]
    for i in range(1, n):
        den = diag[i] - sub[i] * cp[i - 1]
        cp[i] = sup[i] / den
        dp[i] = (rhs[i] - sub[i] * dp[i - 1]) / den
    x = np.empty(rhs.shape, dtype=complex)
    x[-1] = dp[-1]
    for i in range(n - 2, -1, -1):
        x[i] = dp[i] - cp[i] * x[i + 1]
    return x


def _newton_level(u: np.ndarray, epsilon: float, torus: TorusSpec, tol: float, config: SolverConfig):
    """Damped Newton at one epsilon level; returns (u, max residual, iterations)."""
    R = geodesic_residual(u, epsilon, torus)
    rn = float(np.abs(R).max())
    for it in range(config.max_iter + 1):
        if rn <= tol:
            return u, rn, it
        if it == config.max_iter:
            break
        lin = _Linearization(u, torus)
        forcing = min(1e-2, max(1e-3 * rn, 1e-13 / max(rn, 1e-300) * tol))
        delta = lin.solve(-R, rtol=max(forcing, 1e-14), restart=config.gmres_restart,
                          maxiter=config.gmres_maxiter)
        l2 = float(np.linalg.norm(R))
        alpha = 1.0
        positive_seen = False
        while alpha >= config.min_step:
            trial = u.copy()
            trial[1:-1] += alpha * delta
            if fiber_positivity(trial[1:-1], torus).min() > POSITIVITY_TOL:
                positive_seen = True
                Rt = geodesic_residual(trial, epsilon, torus)
                if np.linalg.norm(Rt) <= (1 - config.armijo * alpha) * l2:
                    break
            alpha *= 0.5
        else:
            if not positive_seen:
                raise PositivityLoss(f"no step keeps 1 + u_zzbar > 0 (epsilon={epsilon})")
            raise NoConvergence(
                f"line search failed at epsilon={epsilon}, residual {rn:.3e}", residual=rn, iterate=u
            )
        u, R = trial, Rt
        rn = float(np.abs(R).max())
        log.debug("eps=%g it=%d step=%g residual=%.3e", epsilon, it + 1, alpha, rn)
    raise NoConvergence(
        f"no convergence in {config.max_iter} iterations at epsilon={epsilon}, residual {rn:.3e}",
        residual=rn,
        iterate=u,
    )


def newton_solve(
    problem: GeodesicProblem,
    config: SolverConfig = SolverConfig(),
    initial: Optional[np.ndarray] = None,
    start_epsilon: Optional[float] = None,
) -> GeodesicSolution:
    """Solve the regularized problem by epsilon-continuation and damped Newton.

    ``initial`` (all levels, boundary rows are overwritten) is used when
    ``config.initial_guess == 'prior'`` or when given explicitly;
    ``start_epsilon`` sets the top of the continuation schedule.
    """
    torus = problem.torus
    if initial is not None:
        u = np.array(initial, dtype=float, copy=True)
        if u.shape != (problem.nt + 2,) + torus.shape:
            raise ValidationError(f"initial guess has shape {u.shape}")
    elif config.initial_guess == "prior":
        raise ValidationError("initial_guess='prior' needs an initial iterate")
    else:
        u = problem.linear_guess()
    u[0] = 0.0
    u[-1] = problem.v.values
    history = []
    levels = config.schedule(problem.epsilon, start_epsilon)
    iters = 0
    rn = np.inf
    for k, eps in enumerate(levels):
        final = k == len(levels) - 1
        tol = config.newton_tol if final else max(config.newton_tol, config.intermediate_tol)
        u, rn, iters = _newton_level(u, eps, torus, tol, config)
        history.append({"epsilon": eps, "iterations": iters, "residual": rn})
    return GeodesicSolution(problem, u, rn, iters, history)


def symmetry_check(sol: GeodesicSolution) -> float:
    """``max |u(t, z) - u(t, -z)|`` over all levels."""
    return float(np.abs(sol.u - reflect_values(sol.u, sol.torus.ndim)).max())


def monotonicity_check(sol1: GeodesicSolution, sol2: GeodesicSolution, newton_tol: Optional[float] = None,
                       newton_tol2: Optional[float] = None) -> bool:
    """Discrete comparison: ``u1 <= u2 + slack`` with ``slack = 10 (tol1 + tol2)``."""
    if sol1.u.shape != sol2.u.shape:
        raise ValidationError("solutions live on different grids")
    t1 = sol1.residual_norm if newton_tol is None else newton_tol
    t2 = sol2.residual_norm if newton_tol2 is None else newton_tol2
    slack = 10.0 * (t1 + t2)
    return bool(np.all(sol1.u <= sol2.u + slack))


def _spatial_multi_indices(k: int, ndim: int):
    if ndim != 2:
        raise ValidationError("norm ladder is implemented for m = 1")
    return [(a, k - a) for a in range(k + 1)]


def norm_ladder(sol: GeodesicSolution, max_order: int = 3) -> dict:
    """Discrete mixed norms ``C^l = max_{j+k<=l} sup |d_t^j D_x^k u|``.

    Time derivatives are forward differences on the full level grid, space
    derivatives are spectral.  Components are keyed ``"j,k"``.
    """
    u, torus = sol.u, sol.torus
    dt = 1.0 / (u.shape[0] - 1)
    comp = {}
    for j in range(max_order + 1):
        dj = np.diff(u, n=j, axis=0) / dt**j if j else u
        for k in range(max_order + 1 - j):
            comp[f"{j},{k}"] = max(
                float(np.abs(spectral_partial(dj, torus, mi)).max())
                for mi in _spatial_multi_indices(k, torus.ndim)
            )
    ladder = {}
    for l in range(max_order + 1):
        ladder[f"C{l}"] = max(v for key, v in comp.items() if sum(map(int, key.split(","))) <= l)
    ladder["components"] = comp
    return ladder


def third_deriv_diagnostic(sol: GeodesicSolution, radius: float = 0.25, x0=0j) -> float:
    """``sup |d_t^j D_x^k u|`` over ``j + k = 3`` near ``(t = 1, x0)``.

    Levels: last two interior levels and the boundary, with one-sided
    (backward) time differences; points within ``radius`` of ``x0``.
    """
    u, torus = sol.u, sol.torus
    dt = 1.0 / (u.shape[0] - 1)
    z = torus.chart([x0])[0]
    mask = np.broadcast_to(np.abs(z) <= radius, torus.shape)
    top = u.shape[0] - 1
    best = 0.0
    for level in (top - 2, top - 1, top):
        for j in range(4):
            dj = sum((-1) ** i * comb(j, i) * u[level - i] for i in range(j + 1)) / dt**j
            k = 3 - j
            for mi in _spatial_multi_indices(k, torus.ndim):
                d = spectral_partial(dj, torus, mi)
                best = max(best, float(np.abs(d[mask]).max()))
    return best


@dataclass
class SweepRow:
    epsilon: float
    converged: bool
    ladder: dict = field(default_factory=dict)
    third_deriv: float = float("nan")
    residual: float = float("nan")
    iterations: int = 0
    error: Optional[str] = None


SWEEP_COLUMNS = ["epsilon", "C0", "C1", "C2", "C3", "thirdDerivDiagnostic"]


@dataclass
class SweepReport:
    rows: List[SweepRow]
    solutions: list = field(default_factory=list, repr=False)

    @property
    def all_converged(self) -> bool:
        return all(r.converged for r in self.rows)

    def trend(self) -> str:
        vals = [r.third_deriv for r in self.rows if r.converged]
        if len(vals) < 2:
            return "insufficient"
        diffs = np.diff(vals)
        if np.all(diffs > 0):
            return "increasing"
        if np.all(diffs < 0):
            return "decreasing"
        spread = (max(vals) - min(vals)) / max(abs(max(vals)), 1e-300)
        return "bounded" if spread < 0.5 else "mixed"

    def to_dict(self) -> dict:
        return {
            "rows": [
                {
                    "epsilon": r.epsilon,
                    "converged": r.converged,
                    "normLadder": r.ladder,
                    "thirdDerivDiagnostic": r.third_deriv,
                    "residualNorm": r.residual,
                    "newtonIterations": r.iterations,
                    "error": r.error,
                }
                for r in self.rows
            ],
            "allConverged": self.all_converged,
            "trend": self.trend(),
        }

    def to_csv(self, path=None) -> str:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(SWEEP_COLUMNS)
        for r in self.rows:
            if not r.converged:
                continue
            w.writerow([repr(r.epsilon)] + [repr(r.ladder[f"C{l}"]) for l in range(4)] + [repr(r.third_deriv)])
        text = buf.getvalue()
        if path is not None:
            Path(path).write_text(text)
        return text


def epsilon_sweep(
    template: GeodesicProblem, schedule: Sequence[float], config: SolverConfig = SolverConfig()
) -> SweepReport:
    """Warm-started solves over a decreasing epsilon schedule; failures are recorded, not raised."""
    schedule = [float(e) for e in schedule]
    if any(b >= a for a, b in zip(schedule, schedule[1:])):
        raise ValidationError("sweep schedule must be strictly decreasing")
    rows, sols = [], []
    prior = None
    for eps in schedule:
        problem = template.with_epsilon(eps)
        try:
            if prior is None:
                sol = newton_solve(problem, config)
            else:
                sol = newton_solve(problem, config, initial=prior.u, start_epsilon=prior.epsilon)
        except NumericalError as exc:
            rows.append(SweepRow(eps, False, error=f"{type(exc).__name__}: {exc}"))
            continue
        prior = sol
        sols.append(sol)
        rows.append(
            SweepRow(eps, True, norm_ladder(sol), third_deriv_diagnostic(sol), sol.residual_norm,
                     sol.newton_iterations)
        )
    return SweepReport(rows, sols)


def write_solution(sol: GeodesicSolution, path) -> None:
    torus = sol.torus
    with open(path, "wb") as fh:
        fh.write(SOLUTION_HEADER.pack(torus.m, float(torus.L), torus.N, sol.problem.nt, float(sol.epsilon)))
        for level in sol.u:
            write_field_stream(ScalarField(torus, level), fh)


def read_solution(path) -> GeodesicSolution:
    """Load a solution file; residual and iteration count are recomputed/unknown."""
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with open(path, "rb") as fh:
        head = fh.read(SOLUTION_HEADER.size)
        if len(head) != SOLUTION_HEADER.size:
            raise ValidationError("truncated solution header")
        m, L, N, nt, eps = SOLUTION_HEADER.unpack(head)
        torus = TorusSpec(int(m), float(L), int(N))
        levels = []
        for _ in range(nt + 2):
            f = read_field_stream(fh)
            if f.spec != torus:
                raise ValidationError("level grid differs from solution header")
            levels.append(f.values)
    u = np.array(levels)
    problem = GeodesicProblem(torus, ScalarField(torus, u[-1]), float(eps), int(nt))
    res = float(np.abs(geodesic_residual(u, eps, torus)).max())
    return GeodesicSolution(problem, u, res, 0)
