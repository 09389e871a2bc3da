import io

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from kahlerlab.errors import BallDoesNotFit, ValidationError
from kahlerlab.torus import (
    ScalarField,
    TorusSpec,
    field_to_csv,
    fixed_points,
    involution_pullback,
    levi_matrix,
    omega0_field,
    omega0_matrix,
    read_field,
    read_field_stream,
    spectral_partial,
    wirtinger_derivative,
    write_field,
    write_field_stream,
)


def harmonic(spec, kx, ky, phase=0.0):
    x, y = spec.coords()
    L = spec.L
    return np.cos(2 * np.pi * (kx * x + ky * y) / L + phase)


class TestSpec:
    def test_small_period_rejected(self):
        with pytest.raises(BallDoesNotFit):
            TorusSpec(1, 2.0, 32)

    @pytest.mark.parametrize("N", [12, 24, 8])
    def test_grid_size(self, N):
        with pytest.raises(ValidationError):
            TorusSpec(1, 4.0, N)

    def test_dimension(self):
        with pytest.raises(ValidationError):
            TorusSpec(3, 4.0, 16)


class TestFixedPoints:
    def test_m1(self):
        pts = fixed_points(TorusSpec(1, 4.0, 32)).points
        assert {p[0] for p in pts} == {0, 2, 2j, 2 + 2j}

    @pytest.mark.parametrize("m,L", [(1, 3.0), (1, 7.5), (2, 4.0), (2, 5.0)])
    def test_count(self, m, L):
        fps = fixed_points(TorusSpec(m, L, 16))
        assert len(fps.points) == 4**m

    def test_indices_are_fixed(self):
        spec = TorusSpec(2, 4.0, 16)
        rng = np.random.default_rng(0)
        f = ScalarField(spec, rng.standard_normal(spec.shape))
        g = involution_pullback(f)
        for idx in fixed_points(spec).indices:
            assert g.values[idx] == f.values[idx]


class TestInvolution:
    spec = TorusSpec(1, 4.0, 32)

    def test_constant(self):
        f = ScalarField(self.spec, np.full(self.spec.shape, 2.5))
        assert np.array_equal(involution_pullback(f).values, f.values)

    def test_cosine_even(self):
        f = ScalarField(self.spec, harmonic(self.spec, 1, 0) + 0 * harmonic(self.spec, 0, 1))
        np.testing.assert_allclose(involution_pullback(f).values, f.values, atol=1e-15)

    def test_sine_odd(self):
        f = ScalarField(self.spec, harmonic(self.spec, 1, 0, -np.pi / 2) + 0 * harmonic(self.spec, 0, 1))
        np.testing.assert_allclose(involution_pullback(f).values, -f.values, atol=1e-15)

    @given(st.integers(0, 2**32 - 1), st.sampled_from([1, 2]))
    @settings(max_examples=20)
    def test_involutive(self, seed, m):
        spec = TorusSpec(m, 4.0, 16)
        f = ScalarField(spec, np.random.default_rng(seed).standard_normal(spec.shape))
        assert np.array_equal(involution_pullback(involution_pullback(f)).values, f.values)


class TestWirtinger:
    spec = TorusSpec(1, 4.0, 32)

    def test_laplacian_of_cosine(self):
        v = harmonic(self.spec, 1, 0) + 0 * harmonic(self.spec, 0, 1)
        d = wirtinger_derivative(ScalarField(self.spec, v), (1,), (1,))
        np.testing.assert_allclose(d, -(np.pi / self.spec.L) ** 2 * v, atol=1e-12)

    @pytest.mark.parametrize("dz,dzb", [((1,), (0,)), ((0,), (2,)), ((2,), (1,)), ((0,), (3,))])
    def test_constant(self, dz, dzb):
        f = ScalarField(self.spec, np.full(self.spec.shape, 3.0))
        assert np.abs(wirtinger_derivative(f, dz, dzb)).max() < 1e-14

    @settings(max_examples=30, deadline=None)
    @given(st.integers(-3, 3), st.integers(-3, 3), st.floats(0, 2 * np.pi), st.integers(0, 3), st.data())
    def test_plane_wave(self, kx, ky, phase, p, data):
        q = data.draw(st.integers(0, 3 - p))
        spec = self.spec
        x, y = spec.coords()
        kxw, kyw = 2 * np.pi * kx / spec.L, 2 * np.pi * ky / spec.L
        e = np.exp(1j * (kxw * x + kyw * y + phase))
        # d_z e = (i kx + ky)/2 e ; d_zbar e = (i kx - ky)/2 e
        fz, fzb = (1j * kxw + kyw) / 2, (1j * kxw - kyw) / 2
        want = 0.5 * (fz**p * fzb**q * e + np.conj(fzb) ** p * np.conj(fz) ** q * np.conj(e))
        got = wirtinger_derivative(ScalarField(spec, e.real), (p,), (q,))
        np.testing.assert_allclose(got, want, atol=1e-10)

    def test_product_of_three_harmonics(self):
        spec = self.spec
        x, y = spec.coords()
        w = 2 * np.pi / spec.L
        f = np.cos(w * x) * np.sin(w * y) * np.cos(2 * w * x)
        # f_xxy via product rule by hand: f = 0.5 (cos(wx) + cos(3wx)) sin(wy)
        want = 0.5 * (-(w**2) * np.cos(w * x) - 9 * w**2 * np.cos(3 * w * x)) * w * np.cos(w * y)
        np.testing.assert_allclose(spectral_partial(f, spec, (2, 1)), want, atol=1e-10)

    def test_levi_m2(self):
        spec = TorusSpec(2, 4.0, 16)
        c = spec.coords()
        w = 2 * np.pi / spec.L
        v = np.cos(w * c[0]) * np.cos(w * c[2]) + 0 * (c[1] + c[3])
        levi = levi_matrix(v, spec)
        assert np.allclose(levi, np.conj(np.swapaxes(levi, -1, -2)))
        np.testing.assert_allclose(levi[..., 0, 0].real, -(w**2) / 4 * v, atol=1e-12)
        np.testing.assert_allclose(
            levi[..., 0, 1], np.broadcast_to(w**2 / 4 * np.sin(w * c[0]) * np.sin(w * c[2]), spec.shape), atol=1e-12
        )


class TestOmega0:
    def test_m1(self):
        assert omega0_matrix(TorusSpec(1, 4.0, 16)).tolist() == [[1]]

    def test_m2_field(self):
        spec = TorusSpec(2, 4.0, 16)
        F = omega0_field(spec)
        assert F.shape == spec.shape + (2, 2)
        assert np.linalg.eigvalsh(F[0, 0, 0, 0]).min() == 1.0


class TestIO:
    def test_round_trip(self, tmp_path):
        spec = TorusSpec(1, 4.5, 16)
        f = ScalarField(spec, np.random.default_rng(1).standard_normal(spec.shape))
        write_field(f, tmp_path / "f.field")
        g = read_field(tmp_path / "f.field")
        assert g.spec == spec and np.array_equal(g.values, f.values)

    def test_layout(self):
        spec = TorusSpec(1, 4.0, 16)
        vals = np.arange(256.0).reshape(16, 16)
        buf = io.BytesIO()
        write_field_stream(ScalarField(spec, vals), buf)
        raw = buf.getvalue()
        assert len(raw) == 8 + 8 + 8 + 8 * 256
        assert np.frombuffer(raw[24:32], "<f8")[0] == 0.0 and np.frombuffer(raw[32:40], "<f8")[0] == 1.0

    def test_missing(self, tmp_path):
        with pytest.raises(ValidationError, match="file not found"):
            read_field(tmp_path / "nope.field")

    def test_truncated(self):
        with pytest.raises(ValidationError):
            read_field_stream(io.BytesIO(b"\x01\x00"))

    def test_csv(self, tmp_path):
        spec = TorusSpec(1, 4.0, 16)
        field_to_csv(ScalarField(spec, np.zeros(spec.shape)), tmp_path / "f.csv")
        lines = (tmp_path / "f.csv").read_text().splitlines()
        assert lines[0] == "x1,y1,value" and len(lines) == 257
