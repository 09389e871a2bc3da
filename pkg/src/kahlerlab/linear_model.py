"""Linearized leaf dynamics about the central leaf.

The initial value problem ``phi' = A phi + B conj(phi)``, ``phi(0) = a`` is
solved exactly by expanding ``(a, conj(a))`` in eigenvectors of the block
matrix ``M``.  Every mode is an entire function of ``s``, so the expansion is
its own holomorphic extension to the strip ``0 <= Im s <= 1``, and boundary
compatibility with the Hessian pair reduces to coefficient identities per
distinct exponent.
"""

from __future__ import annotations

import enum
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from typing import List, Optional

import numpy as np
from scipy.linalg import expm

from .errors import DefectiveM, NumericalError
from .matrix_core import BlockSystem, HessianPair, block_eigen, compute_R, random_block_system

COMPAT_TOL = 1e-7
MAX_EIGVEC_COND = 1e8


@dataclass(frozen=True)
class Mode:
    coeff: complex
    lam: complex
    x: np.ndarray
    y: np.ndarray


@dataclass(frozen=True)
class StripSolution:
    """Eigenmode expansion ``phi(s) = sum_k c_k x_k e^{l_k s} + conj(c_k y_k) e^{conj(l_k) s}``."""

    modes: List[Mode]
    a: np.ndarray

    @property
    def m(self) -> int:
        return len(self.a)

    def __call__(self, s) -> np.ndarray:
        """Evaluate phi at complex points ``s``; output shape ``s.shape + (m,)``."""
        s = np.asarray(s, dtype=complex)
        out = np.zeros(s.shape + (self.m,), dtype=complex)
        for md in self.modes:
            out += np.exp(md.lam * s)[..., None] * (md.coeff * md.x)
            out += np.exp(np.conj(md.lam) * s)[..., None] * np.conj(md.coeff * md.y)
        return out

    def derivative(self, s) -> np.ndarray:
        s = np.asarray(s, dtype=complex)
        out = np.zeros(s.shape + (self.m,), dtype=complex)
        for md in self.modes:
            lb = np.conj(md.lam)
            out += (md.lam * np.exp(md.lam * s))[..., None] * (md.coeff * md.x)
            out += (lb * np.exp(lb * s))[..., None] * np.conj(md.coeff * md.y)
        return out

    def psi(self, s) -> np.ndarray:
        """Holomorphic continuation of ``conj(phi)`` from the real axis."""
        s = np.asarray(s, dtype=complex)
        out = np.zeros(s.shape + (self.m,), dtype=complex)
        for md in self.modes:
            out += np.exp(np.conj(md.lam) * s)[..., None] * np.conj(md.coeff * md.x)
            out += np.exp(md.lam * s)[..., None] * (md.coeff * md.y)
        return out

    def reconstruct(self) -> np.ndarray:
        return sum(md.coeff * md.x + np.conj(md.coeff * md.y) for md in self.modes)


class Branch(str, enum.Enum):
    REAL_LAMBDA = "real-lambda"
    IMAGINARY_LAMBDA = "imaginary-lambda"
    MIXED_LAMBDA_CONTRADICTION = "mixed-lambda-contradiction"


@dataclass(frozen=True)
class BranchResult:
    branch: Branch
    constraint_residual: float
    admissible: bool
    details: dict = field(default_factory=dict)


@dataclass
class CompatibilityReport:
    per_mode: list
    compatible: bool
    residual: float = 0.0
    trials: int = 0
    failures: int = 0
    successes: int = 0
    defective: int = 0
    seed: Optional[int] = None

    def to_dict(self) -> dict:
        return {
            "compatible": self.compatible,
            "residual": self.residual,
            "perMode": [
                {
                    "branch": r.branch.value,
                    "constraintResidual": r.constraint_residual,
                    "admissible": r.admissible,
                }
                for r in self.per_mode
            ],
            "searchStats": {
                "trials": self.trials,
                "failures": self.failures,
                "successes": self.successes,
                "defective": self.defective,
                "seed": self.seed,
            },
        }


def solve_ivp(bs: BlockSystem, a) -> StripSolution:
    """Eigenmode solution of ``phi' = A phi + B conj(phi)`` with ``phi(0) = a``.

    Raises DefectiveM when the eigenvector matrix of ``M`` has condition
    number above 1e8; Jordan blocks are not handled.
    """
    a = np.asarray(a, dtype=complex).reshape(-1)
    if a.shape[0] != bs.m:
        raise ValueError(f"initial vector has length {a.shape[0]}, expected {bs.m}")
    pairs = block_eigen(bs)
    V = np.column_stack([ep.vector for ep in pairs])
    cond = np.linalg.cond(V)
    if not np.isfinite(cond) or cond > MAX_EIGVEC_COND:
        raise DefectiveM(f"eigenvector matrix condition number {cond:.3g} exceeds {MAX_EIGVEC_COND:g}")
    # (a, conj a) is invariant under (x, y) -> (conj y, conj x); halving the
    # complex expansion and adding its mirror image gives the stated mode form.
    d = np.linalg.solve(V, np.concatenate([a, a.conj()]))
    modes = [Mode(complex(0.5 * dk), ep.lam, ep.x, ep.y) for dk, ep in zip(d, pairs)]
    return StripSolution(modes, a)


def _exponent_groups(sol: StripSolution, pq: HessianPair):
    """Coefficients of each distinct exponential in ``P conj(phi) + Q phi - psi`` on Im s = 1."""
    P, Q = pq.P, pq.Q
    terms = []
    for md in sol.modes:
        cx, cy = md.coeff * md.x, md.coeff * md.y
        lam, lb = md.lam, np.conj(md.lam)
        # conj(s) = s - 2i on the upper edge
        terms.append((lam, np.exp(-2j * lam) * (P @ cy) + Q @ cx - cy))
        terms.append((lb, np.exp(-2j * lb) * (P @ cx.conj()) + Q @ cy.conj() - cx.conj()))
    groups: list = []
    scale = 1e-9 * (1.0 + max(abs(t[0]) for t in terms))
    for lam, vec in terms:
        for g in groups:
            if abs(g[0] - lam) <= scale:
                g[1] += vec
                break
        else:
            groups.append([lam, vec.copy()])
    return groups


def boundary_match(sol: StripSolution, pq: HessianPair, tol: float = COMPAT_TOL) -> CompatibilityReport:
    """Test the upper-edge identity ``P conj(phi) + Q phi = psi`` exponent by exponent.

    Since distinct exponentials are linearly independent, the identity holds
    for all real parts of ``s`` exactly when every grouped coefficient vanishes.
    """
    groups = _exponent_groups(sol, pq)
    scale = (1.0 + np.linalg.norm(pq.P, 2) + np.linalg.norm(pq.Q, 2)) * max(1.0, np.linalg.norm(sol.a))
    residual = max(float(np.linalg.norm(vec)) for _, vec in groups)
    per_mode = [
        eigenmode_constraints(md.lam, md.x, md.y, pq, tol) for md in sol.modes if abs(md.coeff) > 1e-14
    ]
    return CompatibilityReport(per_mode, bool(residual <= tol * scale), residual)


def eigenmode_constraints(lam, x, y, pq: HessianPair, tol: float = COMPAT_TOL) -> BranchResult:
    """Constraint branch for one eigenpair ``(lam, (x, y))`` of ``M``.

    Real ``lam``: ``{(I - Q)(I - conj Q) - P^2} a = 0`` for ``a = x + conj(y)``.
    Imaginary ``lam``: ``R x = kappa x`` and ``R y = kappa y`` with
    ``kappa = e^{-2i lam} + e^{2i lam} = 2 cosh(2 Im lam) >= 2``.
    Otherwise the eigenpair can only satisfy the boundary identities through
    the chain |x| = |y|, proportionality to a real vector, lam real; the
    residual reports how far the identities are from holding.
    """
    lam = complex(lam)
    x = np.asarray(x, dtype=complex)
    y = np.asarray(y, dtype=complex)
    P, Q = pq.P, pq.Q
    I = np.eye(pq.m)
    vnorm = np.linalg.norm(np.concatenate([x, y]))
    scale = max(1.0, vnorm) * (1.0 + np.linalg.norm(P, 2) + np.linalg.norm(Q, 2)) ** 2
    re_small = abs(lam.imag) <= tol * (1.0 + abs(lam))
    im_small = abs(lam.real) <= tol * (1.0 + abs(lam))
    if re_small:
        a = x + y.conj()
        res = float(np.linalg.norm(((I - Q) @ (I - Q.conj()) - P @ P) @ a))
        return BranchResult(Branch.REAL_LAMBDA, res, bool(res <= tol * scale), {"a": a})
    kappa = np.exp(-2j * lam) + np.exp(2j * lam)
    if im_small:
        R = compute_R(pq)
        res = float(max(np.linalg.norm(R @ x - kappa * x), np.linalg.norm(R @ y - kappa * y)))
        cosh_form = 2.0 * np.cosh(2.0 * lam.imag)
        details = {"kappa": complex(kappa), "kappaAtLeastTwo": bool(kappa.real >= 2.0 - 1e-12),
                   "coshForm": cosh_form}
        return BranchResult(Branch.IMAGINARY_LAMBDA, res, bool(res <= tol * scale), details)
    eq_norms = abs(np.linalg.norm(x) - np.linalg.norm(y)) <= 1e-8 * max(vnorm, 1e-300)
    r1 = np.linalg.norm(Q @ x - (I - np.exp(-2j * lam) * P) @ y)
    r2 = np.linalg.norm(Q @ y.conj() - (I - np.exp(-2j * np.conj(lam)) * P) @ x.conj())
    res = float(max(r1, r2))
    # proportionality of x and y to one real vector forces lam real
    G = np.column_stack([x, y])
    rank_one = np.linalg.svd(G, compute_uv=False)[-1] <= 1e-8 * max(vnorm, 1e-300)
    details = {"equalNorms": bool(eq_norms), "proportional": bool(rank_one), "kappa": complex(kappa)}
    return BranchResult(Branch.MIXED_LAMBDA_CONTRADICTION, res, bool(res <= tol * scale), details)


def spanning_initial_vectors(m: int) -> np.ndarray:
    """The 2m real-coordinate basis vectors ``e_j`` and ``i e_j`` of C^m."""
    I = np.eye(m, dtype=complex)
    return np.concatenate([I, 1j * I])


def system_compatible(bs: BlockSystem, pq: HessianPair, tol: float = COMPAT_TOL):
    """True when every spanning initial vector passes ``boundary_match``; also the worst residual."""
    worst = 0.0
    ok = True
    for a in spanning_initial_vectors(bs.m):
        rep = boundary_match(solve_ivp(bs, a), pq, tol)
        worst = max(worst, rep.residual)
        ok = ok and bool(rep.compatible)
    return ok, worst


def _trial(args):
    index, seed, m, pq, tol = args
    if index == 0:
        bs = BlockSystem.zero(m)
    else:
        rng = np.random.default_rng([seed, index])
        scale = float(np.exp(rng.uniform(np.log(0.05), np.log(5.0))))
        bs = random_block_system(rng, m, scale)
    try:
        ok, res = system_compatible(bs, pq, tol)
    except NumericalError:
        return index, None, np.inf
    return index, ok, res


def compatibility_search(
    pq: HessianPair, trials: int, seed: int = 0, tol: float = COMPAT_TOL, threads: int = 1
) -> CompatibilityReport:
    """Search random block systems for one compatible with the Hessian pair.

    Trial 0 is always the zero system ``A = B = 0``; the rest are seeded
    random systems with log-uniform scale.  Results are merged by trial index.
    """
    if trials < 1:
        raise ValueError("trials must be >= 1")
    jobs = [(i, seed, pq.m, pq, tol) for i in range(trials)]
    if threads > 1:
        with ThreadPoolExecutor(threads) as ex:
            results = list(ex.map(_trial, jobs))
    else:
        results = [_trial(j) for j in jobs]
    results.sort(key=lambda r: r[0])
    successes = sum(1 for _, ok, _ in results if ok)
    defective = sum(1 for _, ok, _ in results if ok is None)
    best = min(r for _, _, r in results)
    return CompatibilityReport(
        per_mode=[],
        compatible=successes > 0,
        residual=float(best),
        trials=trials,
        failures=trials - successes,
        successes=successes,
        defective=defective,
        seed=seed,
    )


def propagate_expm(bs: BlockSystem, a, s) -> np.ndarray:
    """Realified matrix-exponential solution at real points ``s`` (reference route)."""
    a = np.asarray(a, dtype=complex)
    M = bs.M
    v0 = np.concatenate([a, a.conj()])
    s = np.atleast_1d(np.asarray(s, dtype=float))
    return np.array([(expm(M * sk) @ v0)[: bs.m] for sk in s])
