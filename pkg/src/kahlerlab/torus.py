"""Flat torus C^m / L(Z + iZ)^m with periodic grids and spectral calculus.

Grid points sit at ``k * L / N`` for ``k = 0..N-1`` on every real axis, axis
order ``(x_1, y_1, ..., x_m, y_m)``.  With ``N`` even the reflection
``z -> -z`` maps the grid to itself, so pulling back by it is an index
permutation.
"""

from __future__ import annotations

import csv
import functools
import itertools
import struct
from dataclasses import dataclass
from math import comb
from pathlib import Path
from typing import List, Sequence, Tuple

import numpy as np

from .errors import BallDoesNotFit, ValidationError

MIN_PERIOD = 2.2
FIELD_HEADER = struct.Struct("<qdq")


@dataclass(frozen=True)
class TorusSpec:
    m: int = 1
    L: float = 4.0
    N: int = 64

    def __post_init__(self):
        if self.m not in (1, 2):
            raise ValidationError(f"m must be 1 or 2, got {self.m}")
        if not self.L > MIN_PERIOD:
            raise BallDoesNotFit(f"L={self.L} too small: unit ball needs L > {MIN_PERIOD}")
        N = self.N
        if N < 16 or N & (N - 1):
            raise ValidationError(f"N must be a power of two >= 16, got {N}")

    @property
    def h(self) -> float:
        return self.L / self.N

    @property
    def ndim(self) -> int:
        return 2 * self.m

    @property
    def shape(self) -> Tuple[int, ...]:
        return (self.N,) * self.ndim

    def axis_coords(self) -> np.ndarray:
        return np.arange(self.N) * self.h

    def coords(self) -> List[np.ndarray]:
        """Real coordinates as sparse broadcastable arrays, one per axis."""
        return np.meshgrid(*([self.axis_coords()] * self.ndim), indexing="ij", sparse=True)

    def chart(self, x0: Sequence[complex] = None) -> List[np.ndarray]:
        """Complex coordinates ``z_j`` centered at ``x0``, wrapped into ``[-L/2, L/2)``."""
        if x0 is None:
            x0 = [0j] * self.m
        c = self.coords()
        L = self.L
        out = []
        for j in range(self.m):
            x = (c[2 * j] - x0[j].real + L / 2) % L - L / 2
            y = (c[2 * j + 1] - x0[j].imag + L / 2) % L - L / 2
            out.append(x + 1j * y)
        return out

    def wavenumbers(self) -> np.ndarray:
        return 2 * np.pi * np.fft.fftfreq(self.N, d=self.h)


@dataclass(frozen=True, eq=False)
class ScalarField:
    spec: TorusSpec
    values: np.ndarray

    def __post_init__(self):
        v = np.array(self.values, dtype=float)
        if v.shape != self.spec.shape:
            raise ValidationError(f"field shape {v.shape} does not match grid {self.spec.shape}")
        if not np.all(np.isfinite(v)):
            raise ValidationError("field has non-finite values")
        v.setflags(write=False)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True)
class FixedPointSet:
    points: List[Tuple[complex, ...]]
    indices: List[Tuple[int, ...]]


def fixed_points(spec: TorusSpec) -> FixedPointSet:
    """The 4^m half-lattice points, all isolated fixed points of ``z -> -z``."""
    half = [0j, spec.L / 2 + 0j, 1j * spec.L / 2, (1 + 1j) * spec.L / 2]
    half_idx = [(0, 0), (spec.N // 2, 0), (0, spec.N // 2), (spec.N // 2, spec.N // 2)]
    points, indices = [], []
    for combo in itertools.product(range(4), repeat=spec.m):
        points.append(tuple(half[c] for c in combo))
        indices.append(tuple(i for c in combo for i in half_idx[c]))
    return FixedPointSet(points, indices)


def reflect_values(values: np.ndarray, ndim: int) -> np.ndarray:
    """``f(-z)`` on the trailing ``ndim`` axes: index ``k -> (-k) mod N``."""
    axes = tuple(range(values.ndim - ndim, values.ndim))
    return np.roll(np.flip(values, axis=axes), 1, axis=axes)


def involution_pullback(f: ScalarField) -> ScalarField:
    return ScalarField(f.spec, reflect_values(f.values, f.spec.ndim))


@functools.lru_cache(maxsize=64)
def _partial_symbol(spec: TorusSpec, orders: Tuple[int, ...]) -> np.ndarray:
    k = spec.wavenumbers()
    nyq = spec.N // 2
    sym = np.ones((1,) * spec.ndim, dtype=complex)
    for ax, o in enumerate(orders):
        if o == 0:
            continue
        ka = (1j * k) ** o
        if o % 2:
            ka[nyq] = 0.0
        shape = [1] * spec.ndim
        shape[ax] = spec.N
        sym = sym * ka.reshape(shape)
    return sym


def _wirtinger_terms(dz: Sequence[int], dzbar: Sequence[int]) -> dict:
    """Expand prod_j (d_x - i d_y)^p_j (d_x + i d_y)^q_j / 2^(p_j+q_j) into real partials."""
    terms = {(): 1.0 + 0j}
    for p, q in zip(dz, dzbar):
        local = {}
        for a in range(p + 1):
            for b in range(q + 1):
                # (d_x - i d_y)^p: C(p,a) d_x^(p-a) (-i d_y)^a ; (d_x + i d_y)^q likewise
                c = comb(p, a) * comb(q, b) * (-1j) ** a * (1j) ** b / 2 ** (p + q)
                key = (p - a + q - b, a + b)
                local[key] = local.get(key, 0) + c
        terms = {
            k1 + k2: c1 * c2 for k1, c1 in terms.items() for k2, c2 in local.items()
        }
    return terms


@functools.lru_cache(maxsize=64)
def wirtinger_symbol(spec: TorusSpec, dz: Tuple[int, ...], dzbar: Tuple[int, ...]) -> np.ndarray:
    if len(dz) != spec.m or len(dzbar) != spec.m:
        raise ValidationError(f"derivative multi-index must have length m={spec.m}")
    if sum(dz) + sum(dzbar) > 3 or min(dz + dzbar) < 0:
        raise ValidationError("Wirtinger derivatives are supported up to total order 3")
    sym = np.zeros(spec.shape, dtype=complex)
    for orders, c in _wirtinger_terms(dz, dzbar).items():
        if c != 0:
            sym = sym + c * _partial_symbol(spec, orders)
    return sym


def spectral_partial(values: np.ndarray, spec: TorusSpec, orders: Sequence[int]) -> np.ndarray:
    """Real partial derivative along the trailing grid axes (leading axes are batch)."""
    orders = tuple(int(o) for o in orders)
    axes = tuple(range(-spec.ndim, 0))
    if not any(orders):
        return np.array(values, dtype=float)
    F = np.fft.fftn(values, axes=axes)
    return np.fft.ifftn(F * _partial_symbol(spec, orders), axes=axes).real


def wirtinger(values: np.ndarray, spec: TorusSpec, dz: Sequence[int], dzbar: Sequence[int]) -> np.ndarray:
    """Complex Wirtinger derivative along the trailing grid axes."""
    sym = wirtinger_symbol(spec, tuple(dz), tuple(dzbar))
    axes = tuple(range(-spec.ndim, 0))
    return np.fft.ifftn(np.fft.fftn(values, axes=axes) * sym, axes=axes)


def wirtinger_derivative(f: ScalarField, dz: Sequence[int], dzbar: Sequence[int]) -> np.ndarray:
    """``d^|dz| / dz^dz  d^|dzbar| / dzbar^dzbar`` of ``f`` by trigonometric interpolation."""
    return wirtinger(f.values, f.spec, dz, dzbar)


def levi_matrix(values: np.ndarray, spec: TorusSpec) -> np.ndarray:
    """Pointwise ``(u_{z_j zbar_k})`` with shape ``values.shape + (m, m)``."""
    m = spec.m
    out = np.empty(values.shape + (m, m), dtype=complex)
    for j in range(m):
        for k in range(m):
            dz = tuple(int(i == j) for i in range(m))
            dzb = tuple(int(i == k) for i in range(m))
            out[..., j, k] = wirtinger(values, spec, dz, dzb)
    return 0.5 * (out + np.conj(np.swapaxes(out, -1, -2)))


def omega0_matrix(spec: TorusSpec) -> np.ndarray:
    """Coefficients of the flat form ``i sum dz_j ^ dzbar_j``: the identity everywhere."""
    return np.eye(spec.m, dtype=complex)


def omega0_field(spec: TorusSpec) -> np.ndarray:
    """``omega0_matrix`` broadcast over the grid (read-only view, no copy)."""
    return np.broadcast_to(omega0_matrix(spec), spec.shape + (spec.m, spec.m))


def omega0_potential(z: Sequence[np.ndarray]) -> np.ndarray:
    """Local potential ``sum |z_j|^2`` of the flat form."""
    return sum(np.abs(zj) ** 2 for zj in z)


def write_field(f: ScalarField, path) -> None:
    with open(path, "wb") as fh:
        write_field_stream(f, fh)


def write_field_stream(f: ScalarField, fh) -> None:
    fh.write(FIELD_HEADER.pack(f.spec.m, float(f.spec.L), f.spec.N))
    fh.write(np.ascontiguousarray(f.values, dtype="<f8").tobytes())


def read_field_stream(fh) -> ScalarField:
    head = fh.read(FIELD_HEADER.size)
    if len(head) != FIELD_HEADER.size:
        raise ValidationError("truncated field header")
    m, L, N = FIELD_HEADER.unpack(head)
    spec = TorusSpec(int(m), float(L), int(N))
    count = int(np.prod(spec.shape))
    raw = fh.read(8 * count)
    if len(raw) != 8 * count:
        raise ValidationError(f"field data truncated: expected {count} values")
    return ScalarField(spec, np.frombuffer(raw, dtype="<f8").reshape(spec.shape))


def read_field(path) -> ScalarField:
    path = Path(path)
    if not path.exists():
        raise ValidationError(f"file not found: {path}")
    with open(path, "rb") as fh:
        return read_field_stream(fh)


def field_to_csv(f: ScalarField, path) -> None:
    spec = f.spec
    names = [f"{c}{j + 1}" for j in range(spec.m) for c in ("x", "y")]
    ax = spec.axis_coords()
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(names + ["value"])
        for idx in np.ndindex(*spec.shape):
            w.writerow([f"{ax[i]:.10g}" for i in idx] + [repr(float(f.values[idx]))])
