"""Small dense complex matrix algebra behind the obstruction criterion.

Holds the Hessian pair ``(P, Q)`` at the fixed point, the obstruction matrix
``R = (I + P^2 - Q conj(Q)) P^{-1}``, the block matrix
``M = [[A, B], [conj(B), conj(A)]]`` with its eigenvector dichotomy, and
seeded generators for structured random matrices.
"""

from __future__ import annotations

import enum
from dataclasses import dataclass, field
from typing import Optional, Sequence

import numpy as np

from .errors import ConvergenceFailure, SingularP, ValidationError

STRUCT_TOL = 1e-10
SIMPLICITY_GAP = 1e-6


def _as_square(M, name="matrix") -> np.ndarray:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    if M.ndim != 2 or M.shape[0] != M.shape[1] or M.shape[0] < 1:
        raise ValidationError(f"{name} must be a nonempty square matrix, got shape {M.shape}")
    if not np.all(np.isfinite(M)):
        raise ValidationError(f"{name} has non-finite entries")
    return M


def is_hermitian(M, tol=STRUCT_TOL) -> bool:
    M = np.asarray(M)
    return bool(np.linalg.norm(M - M.conj().T) <= tol * max(1.0, np.linalg.norm(M)))


def is_symmetric(M, tol=STRUCT_TOL) -> bool:
    M = np.asarray(M)
    return bool(np.linalg.norm(M - M.T) <= tol * max(1.0, np.linalg.norm(M)))


def is_skew_adjoint(M, tol=STRUCT_TOL) -> bool:
    M = np.asarray(M)
    return bool(np.linalg.norm(M + M.conj().T) <= tol * max(1.0, np.linalg.norm(M)))


def min_hermitian_eig(M) -> float:
    """Smallest eigenvalue of the Hermitian part of ``M``."""
    M = np.asarray(M, dtype=complex)
    return float(np.linalg.eigvalsh(0.5 * (M + M.conj().T))[0])


def is_positive_definite(M) -> bool:
    return min_hermitian_eig(M) > 0.0


@dataclass(frozen=True)
class HessianPair:
    """Boundary Hessian data at the fixed point: ``P`` Hermitian positive, ``Q`` symmetric."""

    P: np.ndarray
    Q: np.ndarray
    tol: float = STRUCT_TOL

    def __post_init__(self):
        P = _as_square(self.P, "P")
        Q = _as_square(self.Q, "Q")
        if P.shape != Q.shape:
            raise ValidationError(f"P and Q shapes differ: {P.shape} vs {Q.shape}")
        if not is_hermitian(P, self.tol):
            raise ValidationError("P must be Hermitian")
        if not is_symmetric(Q, self.tol):
            raise ValidationError("Q must be symmetric")
        if not is_positive_definite(P):
            raise ValidationError("P must be positive definite")
        object.__setattr__(self, "P", P)
        object.__setattr__(self, "Q", Q)

    @property
    def m(self) -> int:
        return self.P.shape[0]

    @classmethod
    def diagonal(cls, p: Sequence[complex], q: Sequence[complex]) -> "HessianPair":
        return cls(np.diag(np.asarray(p, dtype=complex)), np.diag(np.asarray(q, dtype=complex)))


@dataclass(frozen=True)
class BlockSystem:
    """Skew-adjoint ``A`` and symmetric ``B`` with the assembled 2m x 2m matrix ``M``."""

    A: np.ndarray
    B: np.ndarray
    tol: float = STRUCT_TOL

    def __post_init__(self):
        A = _as_square(self.A, "A")
        B = _as_square(self.B, "B")
        if A.shape != B.shape:
            raise ValidationError(f"A and B shapes differ: {A.shape} vs {B.shape}")
        if not is_skew_adjoint(A, self.tol):
            raise ValidationError("A must be skew-adjoint")
        if not is_symmetric(B, self.tol):
            raise ValidationError("B must be symmetric")
        object.__setattr__(self, "A", A)
        object.__setattr__(self, "B", B)

    @property
    def m(self) -> int:
        return self.A.shape[0]

    @property
    def M(self) -> np.ndarray:
        return np.block([[self.A, self.B], [self.B.conj(), self.A.conj()]])

    @classmethod
    def zero(cls, m: int) -> "BlockSystem":
        return cls(np.zeros((m, m)), np.zeros((m, m)))


@dataclass(frozen=True)
class EigenPair:
    lam: complex
    x: np.ndarray
    y: np.ndarray
    residual: float

    @property
    def vector(self) -> np.ndarray:
        return np.concatenate([self.x, self.y])


class Verdict(str, enum.Enum):
    OBSTRUCTED = "obstructed"
    NOT_OBSTRUCTED = "not-obstructed"
    CRITERION_INAPPLICABLE = "criterion-inapplicable"


@dataclass(frozen=True)
class ObstructionReport:
    R: np.ndarray
    eigenvalues: np.ndarray
    common_basis: Optional[np.ndarray]
    simple: bool
    all_below_minus_two: bool
    verdict: Verdict

    def to_dict(self) -> dict:
        return {
            "R": matrix_to_json(self.R),
            "eigenvaluesOfR": [[float(z.real), float(z.imag)] for z in self.eigenvalues],
            "commonBasis": None
            if self.common_basis is None
            else [[float(c) for c in col] for col in self.common_basis.T],
            "simple": bool(self.simple),
            "allBelowMinusTwo": bool(self.all_below_minus_two),
            "verdict": self.verdict.value,
        }


class Dichotomy(str, enum.Enum):
    LAMBDA_SQ_REAL = "lambda-sq-real"
    EQUAL_NORMS = "equal-norms"
    BOTH = "both"
    VIOLATION = "violation"


class Kind(str, enum.Enum):
    SKEW_ADJOINT = "skew-adjoint"
    SYMMETRIC = "symmetric"
    HERMITIAN_PD = "hermitian-pd"
    COMMON_BASIS_PAIR = "common-basis-pair"


def spectral_order(values: np.ndarray) -> np.ndarray:
    """Indices sorting complex numbers by real part, ties broken by imaginary part."""
    values = np.asarray(values, dtype=complex)
    return np.lexsort((np.round(values.imag, 10), np.round(values.real, 10)))


def fix_phase(v: np.ndarray, tol: float = 1e-12) -> np.ndarray:
    """Rotate ``v`` so its first non-negligible component is real and positive."""
    v = np.asarray(v)
    scale = np.max(np.abs(v)) if v.size else 0.0
    if scale == 0.0:
        return v
    idx = int(np.argmax(np.abs(v) > tol * scale))
    c = v[idx]
    return v * (abs(c) / c)


def compute_R(pq: HessianPair, singular_tol: float = 1e-12) -> np.ndarray:
    """Return ``(I + P^2 - Q conj(Q)) P^{-1}``, right-multiplied by the inverse."""
    if min_hermitian_eig(pq.P) <= singular_tol:
        raise SingularP(f"min eig(P) <= {singular_tol}")
    I = np.eye(pq.m)
    N = I + pq.P @ pq.P - pq.Q @ pq.Q.conj()
    # N P^{-1} = (P^{-T} N^T)^T
    return np.linalg.solve(pq.P.T, N.T).T


_COMBO_COEFFS = ((0.7548776662466927, 0.5698402909980532), (0.3247179572447460, 0.8191725133961645))


def common_real_eigenbasis(pq: HessianPair, tol: float = 1e-8) -> Optional[np.ndarray]:
    """Real orthonormal simultaneous eigenbasis of ``P`` and ``Q``, as columns, or None.

    Degeneracies of ``P`` are broken by a fixed generic combination with the
    real and imaginary parts of ``Q``; every candidate vector is then checked
    by its eigen-residual against both matrices.
    """
    P, Q = pq.P, pq.Q
    scale = 1.0 + np.linalg.norm(P) + np.linalg.norm(Q)
    for c1, c2 in _COMBO_COEFFS:
        S = P.real + c1 * Q.real + c2 * Q.imag
        S = 0.5 * (S + S.T)
        _, V = np.linalg.eigh(S)
        ok = True
        cols = []
        for j in range(pq.m):
            xi = V[:, j]
            p = xi @ P @ xi
            q = xi @ Q @ xi
            res = np.linalg.norm(P @ xi - p * xi) + np.linalg.norm(Q @ xi - q * xi)
            if res > tol * scale:
                ok = False
                break
            cols.append(fix_phase(xi).real)
        if ok:
            return np.column_stack(cols)
    return None


def _eig_simple(eigs: np.ndarray, norm: float, gap: float) -> bool:
    thresh = gap * (1.0 + norm)
    for i in range(len(eigs)):
        for j in range(i + 1, len(eigs)):
            if abs(eigs[i] - eigs[j]) <= thresh:
                return False
    return True


def obstruction_certificate(
    pq: HessianPair, tol: float = 1e-8, gap: float = SIMPLICITY_GAP
) -> ObstructionReport:
    """Evaluate the eigenvalue criterion on ``R`` that rules out C^3 solutions."""
    R = compute_R(pq)
    eigs = np.linalg.eigvals(R)
    eigs = eigs[spectral_order(eigs)]
    normR = float(np.linalg.norm(R, 2))
    basis = common_real_eigenbasis(pq, tol)
    simple = _eig_simple(eigs, normR, gap)
    below = bool(np.all((eigs.real < -2.0) & (np.abs(eigs.imag) <= tol * (1.0 + normR))))
    if basis is None or not simple:
        verdict = Verdict.CRITERION_INAPPLICABLE
    elif below:
        verdict = Verdict.OBSTRUCTED
    else:
        verdict = Verdict.NOT_OBSTRUCTED
    return ObstructionReport(R, eigs, basis, simple, below, verdict)


def block_eigen(bs: BlockSystem) -> list:
    """All 2m eigenpairs of ``M``, unit-normalized, phase-fixed and spectrally ordered."""
    M = bs.M
    try:
        lams, V = np.linalg.eig(M)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    m = bs.m
    out = []
    for k in spectral_order(lams):
        v = V[:, k] / np.linalg.norm(V[:, k])
        v = fix_phase(v)
        res = float(np.linalg.norm(M @ v - lams[k] * v))
        out.append(EigenPair(complex(lams[k]), v[:m].copy(), v[m:].copy(), res))
    return out


def dichotomy_check(ep: EigenPair, tol: float = 1e-8) -> Dichotomy:
    """Classify an eigenpair of ``M``: either lambda^2 is real or |x| = |y|."""
    norm = np.linalg.norm(ep.vector)
    sq_real = abs((ep.lam**2).imag) <= tol
    equal = abs(np.linalg.norm(ep.x) - np.linalg.norm(ep.y)) <= tol * norm
    if sq_real and equal:
        return Dichotomy.BOTH
    if sq_real:
        return Dichotomy.LAMBDA_SQ_REAL
    if equal:
        return Dichotomy.EQUAL_NORMS
    return Dichotomy.VIOLATION


def _complex_gaussian(rng: np.random.Generator, shape) -> np.ndarray:
    return rng.standard_normal(shape) + 1j * rng.standard_normal(shape)


def random_orthogonal(rng: np.random.Generator, m: int) -> np.ndarray:
    Qm, Rm = np.linalg.qr(rng.standard_normal((m, m)))
    return Qm * np.sign(np.diag(Rm))


def random_structured(seed, m: int, kind):
    """Seeded random matrix (or HessianPair for ``Kind.COMMON_BASIS_PAIR``)."""
    if m < 1:
        raise ValidationError(f"m must be >= 1, got {m}")
    kind = Kind(kind)
    rng = np.random.default_rng(seed)
    if kind is Kind.SKEW_ADJOINT:
        G = _complex_gaussian(rng, (m, m))
        return 0.5 * (G - G.conj().T)
    if kind is Kind.SYMMETRIC:
        G = _complex_gaussian(rng, (m, m))
        return 0.5 * (G + G.T)
    if kind is Kind.HERMITIAN_PD:
        G = _complex_gaussian(rng, (m, m))
        return G @ G.conj().T / m + 0.1 * np.eye(m)
    V = random_orthogonal(rng, m)
    p = rng.uniform(0.25, 3.0, m)
    q = 2.0 * _complex_gaussian(rng, m)
    return HessianPair(V @ np.diag(p) @ V.T, V @ np.diag(q) @ V.T)


def random_block_system(rng: np.random.Generator, m: int, scale: float = 1.0) -> BlockSystem:
    G = _complex_gaussian(rng, (m, m))
    H = _complex_gaussian(rng, (m, m))
    return BlockSystem(scale * 0.5 * (G - G.conj().T), scale * 0.5 * (H + H.T))


@dataclass
class DichotomyStats:
    samples: int = 0
    eigenpairs: int = 0
    violations: int = 0
    counts: dict = field(default_factory=lambda: {d.value: 0 for d in Dichotomy})
    worst: float = 0.0


def dichotomy_suite(samples: int, m_values=(1, 2, 3), seed=0, tol: float = 1e-8) -> DichotomyStats:
    """Run the eigenvector dichotomy over seeded random block systems.

    ``worst`` is the largest ``min(|Im lambda^2|, ||x|-|y||)`` seen over unit eigenvectors.
    """
    rng = np.random.default_rng(seed)
    stats = DichotomyStats()
    m_values = tuple(m_values)
    for i in range(samples):
        m = m_values[i % len(m_values)]
        bs = random_block_system(rng, m)
        for ep in block_eigen(bs):
            d = dichotomy_check(ep, tol)
            stats.counts[d.value] += 1
            stats.eigenpairs += 1
            gap = min(abs((ep.lam**2).imag), abs(np.linalg.norm(ep.x) - np.linalg.norm(ep.y)))
            stats.worst = max(stats.worst, gap)
            if d is Dichotomy.VIOLATION:
                stats.violations += 1
        stats.samples += 1
    return stats


def eigenvalue_floor_frequency(samples: int, m: int, seed=0) -> float:
    """Fraction of random common-basis pairs whose R has all eigenvalues >= -2.

    Recorded for information only; the claim is not asserted anywhere.
    """
    rng = np.random.default_rng(seed)
    hits = 0
    for _ in range(samples):
        pq = random_structured(int(rng.integers(2**63 - 1)), m, Kind.COMMON_BASIS_PAIR)
        eigs = np.linalg.eigvals(compute_R(pq))
        hits += bool(np.all(eigs.real >= -2.0))
    return hits / samples if samples else float("nan")


def matrix_to_json(M) -> dict:
    M = np.atleast_2d(np.asarray(M, dtype=complex))
    return {
        "dim": int(M.shape[0]),
        "entries": [[float(z.real), float(z.imag)] for z in M.ravel()],
    }


def matrix_from_json(obj: dict) -> np.ndarray:
    try:
        dim = int(obj["dim"])
        entries = obj["entries"]
    except (KeyError, TypeError) as exc:
        raise ValidationError(f"matrix JSON needs 'dim' and 'entries': {exc}") from exc
    if dim < 1 or len(entries) != dim * dim:
        raise ValidationError(f"matrix JSON: expected {dim * dim} entries, got {len(entries)}")
    vals = np.array([complex(re, im) for re, im in entries])
    return vals.reshape(dim, dim)
