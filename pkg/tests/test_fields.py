"""Grid construction, transforms, shifts, norms and the weighted bundle."""

import math

import numpy as np
import pytest

from baroflow.fields import (
    Field,
    SpectralField,
    box_integral,
    dft_forward,
    dft_inverse,
    lp_norm,
    make_grid,
    shift_field,
    weighted_fields,
)

TWO_PI = 2.0 * np.pi


def dft_direct(values, grid):
    """Direct summation oracle: w_hat(k) = (1/n^d) sum_x w(x) e^{-ik.x}.

    Built from explicit per-axis phase matrices, no FFT library involved.
    """
    n, d = grid.n, grid.d
    x = -0.5 * grid.P + grid.dx * np.arange(n)
    k = (TWO_PI / grid.P) * np.fft.fftfreq(n, 1.0 / n)
    phase = np.exp(-1j * np.outer(k, x))  # (mode, sample)
    out = np.asarray(values, dtype=np.complex128)
    for axis in range(d):
        out = np.moveaxis(np.tensordot(phase, out, axes=([1], [axis])), 0, axis)
    return out / n**d


def random_field(grid, rng, components=1):
    shape = grid.shape if components == 1 else (components,) + grid.shape
    return Field(grid=grid, values=rng.standard_normal(shape))


class TestMakeGrid:
    def test_basic_attributes(self):
        """(1, 8, 2*pi) gives dx = pi/4 and integer modes -3..4."""
        g = make_grid(1, 8, TWO_PI)
        assert g.dx == pytest.approx(np.pi / 4, rel=0, abs=0)
        assert sorted(g.modes[0].ravel().tolist()) == [-3, -2, -1, 0, 1, 2, 3, 4]

    def test_odd_n_rejected(self):
        with pytest.raises(ValueError, match="even"):
            make_grid(2, 5, 1.0)

    def test_even_non_power_of_two_accepted(self):
        g = make_grid(2, 6, 1.0)
        assert g.shape == (6, 6)

    def test_bad_dimension_and_box(self):
        with pytest.raises(ValueError, match="dimension"):
            make_grid(4, 8, 1.0)
        with pytest.raises(ValueError, match="positive"):
            make_grid(2, 8, -1.0)

    def test_mode_set_symmetric_under_negation(self):
        """Every mode's negation is on the lattice, identifying +/- Nyquist."""
        for n in (4, 6, 8, 12):
            g = make_grid(1, n, 1.0)
            mods = set(int(m) % n for m in g.modes[0].ravel())
            for m in g.modes[0].ravel():
                assert (-int(m)) % n in mods

    def test_dealias_mask_cut(self):
        g = make_grid(1, 12, TWO_PI)
        kept = sorted(int(m) for m in g.modes[0].ravel()[g.dealias.ravel()])
        assert kept == [-4, -3, -2, -1, 0, 1, 2, 3, 4]


class TestTransforms:
    def test_single_cosine_amplitudes(self):
        """cos(2*pi x / P) carries coefficient 1/2 at modes +1 and -1."""
        g = make_grid(1, 32, 3.0)
        (x,) = g.axes_coordinates()
        f = Field(grid=g, values=np.cos(TWO_PI * x / g.P))
        coef = dft_forward(f).coefficients
        idx = {int(m): i for i, m in enumerate(g.modes[0].ravel())}
        assert coef[idx[1]] == pytest.approx(0.5, abs=1e-13)
        assert coef[idx[-1]] == pytest.approx(0.5, abs=1e-13)
        others = [c for i, c in enumerate(coef) if i not in (idx[1], idx[-1])]
        assert np.max(np.abs(others)) < 1e-13

    def test_constant_field_concentrates_at_zero(self):
        g = make_grid(2, 8, 1.7)
        coef = dft_forward(Field(grid=g, values=np.full(g.shape, 3.0))).coefficients
        assert coef[0, 0] == pytest.approx(3.0)
        coef = coef.copy()
        coef[0, 0] = 0.0
        assert np.max(np.abs(coef)) < 1e-14

    def test_matches_direct_summation(self):
        """FFT equals the O(n^2) phase-matrix oracle on every dimension."""
        rng = np.random.default_rng(7)
        for d, n in ((1, 16), (2, 8), (3, 6)):
            g = make_grid(d, n, 2.5)
            f = random_field(g, rng)
            got = dft_forward(f).coefficients
            want = dft_direct(f.values, g)
            assert np.max(np.abs(got - want)) < 1e-12

    def test_round_trip(self):
        rng = np.random.default_rng(11)
        for d, n in ((1, 32), (2, 16), (3, 8)):
            g = make_grid(d, n, TWO_PI)
            f = random_field(g, rng, components=d)
            back = dft_inverse(dft_forward(f))
            assert np.max(np.abs(back.values - f.values)) < 1e-12

    def test_parseval(self):
        """Per-volume L2 energy equals the coefficient sum of squares."""
        rng = np.random.default_rng(13)
        for d, n, P in ((1, 64, 1.0), (2, 24, 5.0), (3, 12, TWO_PI)):
            g = make_grid(d, n, P)
            f = random_field(g, rng)
            physical = lp_norm(f, 2, mode="volume") ** 2
            spectral = float(np.sum(np.abs(dft_forward(f).coefficients) ** 2))
            assert physical == pytest.approx(spectral, rel=1e-12)

    def test_hermitian_symmetry_of_real_fields(self):
        g = make_grid(2, 8, 1.0)
        f = random_field(g, np.random.default_rng(3))
        c = dft_forward(f).coefficients
        for i in range(g.n):
            for j in range(g.n):
                assert c[i, j] == pytest.approx(np.conj(c[-i % g.n, -j % g.n]), abs=1e-14)

    def test_inverse_rejects_non_hermitian(self):
        g = make_grid(1, 8, 1.0)
        coef = np.zeros(8, dtype=complex)
        coef[1] = 1.0  # no conjugate partner at -1
        with pytest.raises(ValueError, match="imaginary residual"):
            dft_inverse(SpectralField(grid=g, coefficients=coef))

    def test_forward_rejects_non_finite(self):
        g = make_grid(1, 8, 1.0)
        bad = np.zeros(8)
        bad[3] = np.nan
        with pytest.raises(ValueError, match="finite"):
            Field(grid=g, values=bad)


class TestShift:
    def test_zero_offset_identity(self):
        g = make_grid(2, 8, 1.0)
        f = random_field(g, np.random.default_rng(5))
        assert np.array_equal(shift_field(f, 0).values, f.values)

    def test_full_period_identity(self):
        g = make_grid(2, 8, 1.0)
        f = random_field(g, np.random.default_rng(6))
        assert np.array_equal(shift_field(f, (8, 8)).values, f.values)

    def test_half_period_negates_fundamental_cosine(self):
        g = make_grid(1, 16, TWO_PI)
        (x,) = g.axes_coordinates()
        f = Field(grid=g, values=np.cos(x))
        assert np.max(np.abs(shift_field(f, 8).values + f.values)) < 1e-15

    def test_shift_matches_sampled_translation(self):
        g = make_grid(1, 16, 4.0)
        (x,) = g.axes_coordinates()
        f = Field(grid=g, values=np.sin(TWO_PI * x / g.P))
        got = shift_field(f, 3).values
        want = np.sin(TWO_PI * (x + 3 * g.dx) / g.P)
        assert np.max(np.abs(got - want)) < 1e-14

    def test_norms_preserved_bit_for_bit(self):
        """A circular roll permutes samples, so fsum-based norms are exact."""
        g = make_grid(2, 12, 2.0)
        f = random_field(g, np.random.default_rng(8))
        for p in (1.0, 2.0, 3.5):
            a = lp_norm(f, p)
            b = lp_norm(shift_field(f, (5, 9)), p)
            assert a == b

    def test_wrong_offset_count(self):
        g = make_grid(2, 8, 1.0)
        f = random_field(g, np.random.default_rng(9))
        with pytest.raises(ValueError, match="offsets"):
            shift_field(f, (1, 2, 3))


class TestLpNorm:
    def test_constant_unit_field(self):
        """|1|_p is vol^(1/p) over the box and exactly 1 per unit volume."""
        g = make_grid(3, 6, 1.3)
        f = Field(grid=g, values=np.ones(g.shape))
        assert lp_norm(f, 3, mode="volume") == pytest.approx(1.0, rel=1e-15)
        assert lp_norm(f, 2, mode="full") == pytest.approx(g.vol**0.5, rel=1e-14)

    def test_cosine_l2_closed_form(self):
        """On P = 2*pi the L2 norm of cos(x) is sqrt(pi)."""
        g = make_grid(1, 64, TWO_PI)
        (x,) = g.axes_coordinates()
        f = Field(grid=g, values=np.cos(x))
        assert lp_norm(f, 2) == pytest.approx(math.sqrt(math.pi), rel=1e-14)

    def test_vector_magnitude_convention(self):
        g = make_grid(2, 8, 1.0)
        v = np.zeros((2,) + g.shape)
        v[0], v[1] = 3.0, 4.0
        f = Field(grid=g, values=v)
        assert lp_norm(f, 2, mode="volume") == pytest.approx(5.0, rel=1e-15)

    def test_p_below_one_rejected(self):
        g = make_grid(1, 8, 1.0)
        f = Field(grid=g, values=np.ones(8))
        with pytest.raises(ValueError, match="p must be"):
            lp_norm(f, 0.5)

    def test_box_integral_constant(self):
        g = make_grid(2, 16, 2.0)
        assert box_integral(np.full(g.shape, 1.5), g) == pytest.approx(1.5 * g.vol, rel=1e-15)


class TestWeightedFields:
    def test_uniform_state_hand_values(self):
        """rho=4, m=(4,0,0), kappa=1, gamma=2: w_u=(2,0,0), sonic part 4."""
        g = make_grid(3, 4, 1.0)
        rho = Field(grid=g, values=np.full(g.shape, 4.0))
        mvals = np.zeros((3,) + g.shape)
        mvals[0] = 4.0
        m = Field(grid=g, values=mvals)
        w = weighted_fields(rho, m, gamma=2.0, kappa=1.0)
        assert w.components == 4
        assert np.allclose(w.values[0], 2.0)
        assert np.allclose(w.values[1:3], 0.0)
        assert np.allclose(w.values[3], 4.0)

    def test_vacuum_region_maps_to_zero(self):
        g = make_grid(1, 8, 1.0)
        r = np.ones(8)
        r[2:4] = 0.0
        mv = np.ones((1,) + g.shape)
        mv[0, 2:4] = 0.0
        w = weighted_fields(Field(grid=g, values=r), Field(grid=g, values=mv), 1.4, 1.0)
        assert np.all(w.values[:, 2:4] == 0.0)

    def test_energy_identity(self):
        """0.5|w_u|^2 + |w_c|^2/(gamma-1) is the total energy density."""
        rng = np.random.default_rng(21)
        for d in (1, 2, 3):
            g = make_grid(d, 8, 1.0)
            r = 0.5 + rng.random(g.shape)
            mv = rng.standard_normal((d,) + g.shape)
            gamma, kappa = 1.4, 2.0
            w = weighted_fields(Field(grid=g, values=r), Field(grid=g, values=mv), gamma, kappa)
            dens = 0.5 * np.sum(w.values[:d] ** 2, axis=0) + w.values[d] ** 2 / (gamma - 1)
            expect = 0.5 * np.sum(mv**2, axis=0) / r + kappa * r**gamma / (gamma - 1)
            assert np.max(np.abs(dens - expect)) < 1e-10 * np.max(expect)

    def test_negative_density_rejected(self):
        g = make_grid(1, 8, 1.0)
        r = np.ones(8)
        r[0] = -1e-6
        m = Field(grid=g, values=np.zeros((1, 8)))
        with pytest.raises(ValueError, match="negative"):
            weighted_fields(Field(grid=g, values=r), m, 1.4, 1.0)

    def test_immutability(self):
        g = make_grid(1, 8, 1.0)
        f = Field(grid=g, values=np.ones(8))
        with pytest.raises(ValueError):
            f.values[0] = 2.0
