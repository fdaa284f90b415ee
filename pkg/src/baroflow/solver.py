"""Pseudo-spectral solver for compressible barotropic flow on the torus.

Evolves density rho and momentum m = rho*u under

    d_t rho + div m                          = 0
    d_t m   + div(m x u) + grad p(rho)       = div Sigma + rho*f

with pressure p = kappa*rho^gamma and Newtonian stress
Sigma = 2*mu*D(grad u) + lam*(div u)*I.  Derivatives are spectral,
quadratic fluxes are two-thirds-rule dealiased, time stepping is
classical RK4 with a fixed dt chosen from the initial CFL state.
The cumulative dissipation D(t) and forcing work W(t) ride along as
extra RK4 variables so the energy ledger closes at the scheme's order.
"""

from __future__ import annotations

import math
import warnings
from dataclasses import dataclass, field

import numpy as np

from .fields import Field, PeriodicGrid

__all__ = [
    "ForcingSpec",
    "FluidParams",
    "State",
    "EnergyReport",
    "SnapshotSeries",
    "RunResult",
    "BlowUpError",
    "pressure",
    "sonic_speed",
    "rhs",
    "cfl_dt",
    "step",
    "run",
    "preset_ic",
]

BLOWUP_THRESHOLD = 1e12


class BlowUpError(RuntimeError):
    """Raised when a run leaves the representable regime."""

    def __init__(self, message, t=None):
        super().__init__(message)
        self.t = t


@dataclass(frozen=True)
class ForcingSpec:
    """Momentum forcing f(t, x) as a finite trigonometric sum.

    Each term is (amplitudes, mode, phase): a length-d amplitude vector,
    an integer mode vector, and a scalar phase, contributing
    amplitudes * cos(k.x + phase).  The shared time envelope is
    "const" (1), "cos" (cos(rate*t)) or "exp" (exp(-rate*t)).
    """

    mode: str = "none"
    terms: tuple = ()
    envelope: str = "const"
    rate: float = 0.0

    def __post_init__(self):
        if self.mode not in ("none", "trig"):
            raise ValueError(f"forcing mode must be 'none' or 'trig', got {self.mode!r}")
        if self.envelope not in ("const", "cos", "exp"):
            raise ValueError(f"unknown envelope {self.envelope!r}")
        if self.mode == "trig" and not self.terms:
            raise ValueError("trig forcing requires at least one term")
        norm = []
        for amps, mode_vec, phase in self.terms:
            norm.append((tuple(float(a) for a in amps), tuple(int(v) for v in mode_vec), float(phase)))
        object.__setattr__(self, "terms", tuple(norm))

    @property
    def active(self) -> bool:
        return self.mode != "none"

    def envelope_at(self, t: float) -> float:
        if self.envelope == "const":
            return 1.0
        if self.envelope == "cos":
            return math.cos(self.rate * t)
        return math.exp(-self.rate * t)

    def evaluate(self, t: float, grid: PeriodicGrid) -> np.ndarray:
        """Sample f(t, .) on the grid, shape (d,) + grid.shape."""
        out = np.zeros((grid.d,) + grid.shape)
        if not self.active:
            return out
        coords = grid.axes_coordinates()
        for amps, mode_vec, phase in self.terms:
            if len(amps) != grid.d or len(mode_vec) != grid.d:
                raise ValueError("forcing term dimension does not match grid")
            arg = np.full(grid.shape, phase)
            for axis in range(grid.d):
                arg = arg + (2.0 * np.pi / grid.P) * mode_vec[axis] * coords[axis]
            c = np.cos(arg)
            for axis in range(grid.d):
                out[axis] += amps[axis] * c
        return out * self.envelope_at(t)


@dataclass(frozen=True)
class FluidParams:
    """Barotropic fluid constants.

    lam defaults to -(2/3)*mu; pass lam explicitly to override.  The
    combination lam + 2*mu must stay positive for mu > 0, which also
    keeps the dissipation integral nonnegative.  mu = 0 is allowed only
    as an inviscid reference (lam must then vanish too).
    """

    gamma: float = 1.4
    kappa: float = 1.0
    mu: float = 1e-3
    lam: float = None
    rho_min: float = 1e-10
    forcing: ForcingSpec = field(default_factory=ForcingSpec)

    def __post_init__(self):
        if self.gamma <= 1:
            raise ValueError(f"gamma must exceed 1, got {self.gamma}")
        if self.kappa <= 0:
            raise ValueError(f"kappa must be positive, got {self.kappa}")
        if self.mu < 0:
            raise ValueError(f"mu must be nonnegative, got {self.mu}")
        if self.rho_min <= 0:
            raise ValueError(f"rho_min must be positive, got {self.rho_min}")
        lam = -(2.0 / 3.0) * self.mu if self.lam is None else float(self.lam)
        object.__setattr__(self, "lam", lam)
        if self.mu > 0:
            if lam + 2.0 * self.mu <= 0:
                raise ValueError(f"lam + 2*mu must be positive, got {lam + 2.0 * self.mu}")
        elif lam != 0.0:
            raise ValueError("mu = 0 requires lam = 0 (inviscid reference mode)")


@dataclass(frozen=True)
class State:
    """Flow snapshot: time, scalar density and d-component momentum."""

    t: float
    rho: Field
    m: Field

    def __post_init__(self):
        if not self.rho.is_scalar:
            raise ValueError("rho must be a scalar field")
        if self.m.components != self.grid.d:
            raise ValueError(f"momentum needs {self.grid.d} components, got {self.m.components}")
        if self.m.grid != self.rho.grid:
            raise ValueError("rho and m live on different grids")
        if float(np.min(self.rho.values)) < -1e-12:
            raise ValueError(f"density below tolerance: min {np.min(self.rho.values):.3e}")

    @property
    def grid(self) -> PeriodicGrid:
        return self.rho.grid


@dataclass(frozen=True)
class EnergyReport:
    """Ledger rows (t, E, D, W, R) with R = E + D - E0 - W.

    E(t) is the box-integrated total energy, D the accumulated viscous
    dissipation, W the accumulated forcing work.  M_T records the
    largest E(t) + D(t) seen, the empirical energy-estimate constant.
    """

    t: np.ndarray
    E: np.ndarray
    D: np.ndarray
    W: np.ndarray
    R: np.ndarray
    E0: float
    M_T: float


@dataclass(frozen=True)
class SnapshotSeries:
    """Uniformly spaced snapshots of one run."""

    states: tuple

    def __post_init__(self):
        if len(self.states) < 1:
            raise ValueError("series needs at least one snapshot")
        ts = [s.t for s in self.states]
        if any(b <= a for a, b in zip(ts, ts[1:])):
            raise ValueError("snapshot times must increase strictly")
        object.__setattr__(self, "states", tuple(self.states))

    @property
    def grid(self) -> PeriodicGrid:
        return self.states[0].grid

    @property
    def times(self) -> np.ndarray:
        return np.array([s.t for s in self.states])

    def __len__(self):
        return len(self.states)

    def __iter__(self):
        return iter(self.states)

    def __getitem__(self, i):
        return self.states[i]


@dataclass(frozen=True)
class RunResult:
    series: SnapshotSeries
    report: EnergyReport
    dt: float
    steps_per_snapshot: int
    params: FluidParams


def pressure(rho: np.ndarray, params: FluidParams) -> np.ndarray:
    """Barotropic pressure kappa * rho^gamma (tiny negatives clipped)."""
    r = np.asarray(rho, dtype=np.float64)
    if float(np.min(r)) < -1e-12:
        raise ValueError(f"density below tolerance: min {np.min(r):.3e}")
    return params.kappa * np.maximum(r, 0.0) ** params.gamma


def sonic_speed(rho: np.ndarray, params: FluidParams) -> np.ndarray:
    """Sonic weight c with c^2 = p/rho = kappa*rho^(gamma-1).

    The characteristic speed of the pressure system is sqrt(gamma)*c;
    the CFL bound uses that corrected value.
    """
    r = np.maximum(np.asarray(rho, dtype=np.float64), 0.0)
    return math.sqrt(params.kappa) * r ** (0.5 * (params.gamma - 1.0))


def _spectral_tools(grid: PeriodicGrid):
    axes = grid.spatial_axes()
    return axes, grid.ik_deriv, grid.k2, grid.dealias


def _rhs_core(rho, m, t, grid, params, extra_source=None, want_rates=False):
    """Time derivative of (rho, m); optionally the instantaneous
    dissipation and forcing-work rates for the energy ledger."""
    axes, ik, k2, keep = _spectral_tools(grid)
    d = grid.d
    rho_floor = np.maximum(rho, params.rho_min)
    u = m / rho_floor
    p = params.kappa * np.maximum(rho, 0.0) ** params.gamma

    m_h = np.fft.fftn(m, axes=axes)
    u_h = np.fft.fftn(u, axes=axes)
    p_h = np.fft.fftn(p)

    drho_h = np.zeros(grid.shape, dtype=np.complex128)
    for a in range(d):
        drho_h -= ik[a] * m_h[a]

    div_u_h = np.zeros(grid.shape, dtype=np.complex128)
    for a in range(d):
        div_u_h += ik[a] * u_h[a]

    dm_h = np.empty((d,) + grid.shape, dtype=np.complex128)
    flux_cache = {}
    for a in range(d):
        for b in range(a, d):
            flux_cache[(a, b)] = np.fft.fftn(m[a] * u[b])  # m_a u_b = m_b u_a
    for a in range(d):
        acc = -ik[a] * p_h - params.mu * k2 * u_h[a] + (params.mu + params.lam) * ik[a] * div_u_h
        for b in range(d):
            fl = flux_cache[(a, b)] if a <= b else flux_cache[(b, a)]
            acc = acc - ik[b] * fl
        dm_h[a] = acc

    work_rate = 0.0
    if params.forcing.active:
        f_phys = params.forcing.evaluate(t, grid)
        g_h = np.fft.fftn(rho * f_phys, axes=axes)
        dm_h += g_h
        if want_rates:
            work_rate = float(np.sum(m * f_phys)) * grid.dx**d

    drho = np.real(np.fft.ifftn(drho_h * keep))
    dm = np.real(np.fft.ifftn(dm_h * keep, axes=axes))

    if extra_source is not None:
        s_rho, s_m = extra_source(t, rho, m)
        drho = drho + s_rho
        dm = dm + s_m

    if not want_rates:
        return drho, dm, 0.0, 0.0

    # Parseval forms of int |grad u|^2 dx and int (div u)^2 dx; the raw
    # FFT normalization makes the weight dx^d / n^d.
    par = grid.dx**d / float(grid.n**d)
    grad_sq = float(np.sum(k2 * np.sum(np.abs(u_h) ** 2, axis=0))) * par
    div_sq = float(np.sum(np.abs(div_u_h) ** 2)) * par
    diss_rate = params.mu * grad_sq + (params.mu + params.lam) * div_sq
    return drho, dm, diss_rate, work_rate


def rhs(state: State, params: FluidParams, extra_source=None):
    """Time derivative of (rho, m) as Fields (dealiased spectral form)."""
    drho, dm, _, _ = _rhs_core(
        state.rho.values, state.m.values, state.t, state.grid, params, extra_source
    )
    return Field(grid=state.grid, values=drho), Field(grid=state.grid, values=dm)


def total_energy(state: State, params: FluidParams) -> float:
    """Box integral of 0.5|m|^2/rho + kappa*rho^gamma/(gamma-1)."""
    r = np.maximum(state.rho.values, params.rho_min)
    kinetic = 0.5 * np.sum(state.m.values**2, axis=0) / r
    internal = params.kappa * np.maximum(state.rho.values, 0.0) ** params.gamma / (params.gamma - 1.0)
    return float(np.sum(kinetic + internal)) * state.grid.dx**state.grid.d


def cfl_dt(state: State, params: FluidParams, cfl: float = 0.4) -> float:
    """Stable step from the advective and viscous limits.

    dt = cfl * min( dx / max(|u| + sqrt(gamma)*c),
                    dx^2 * rho_low / (2 d (2 mu + |lam|)) ),

    where c is the sonic weight and rho_low the floored minimum density
    (the diffusion of u scales with (2 mu + |lam|)/rho).
    """
    if not (0 < cfl <= 1):
        raise ValueError(f"cfl must lie in (0, 1], got {cfl}")
    grid = state.grid
    rho = state.rho.values
    u = state.m.values / np.maximum(rho, params.rho_min)
    speed = np.sqrt(np.sum(u**2, axis=0)) + math.sqrt(params.gamma) * sonic_speed(rho, params)
    fastest = float(np.max(speed))
    if fastest <= 0:
        raise ValueError("no propagation speed: state is identically at rest with zero density")
    dt_adv = grid.dx / fastest
    visc = 2.0 * params.mu + abs(params.lam)
    if visc > 0:
        rho_low = max(float(np.min(rho)), params.rho_min)
        dt_visc = grid.dx**2 * rho_low / (2.0 * grid.d * visc)
        dt = cfl * min(dt_adv, dt_visc)
    else:
        dt = cfl * dt_adv
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"computed step is not usable: {dt}")
    return dt


def _check_alive(rho, m, t):
    worst = max(float(np.max(np.abs(rho))), float(np.max(np.abs(m))))
    if not (math.isfinite(worst) and worst <= BLOWUP_THRESHOLD):
        raise BlowUpError(f"solution magnitude {worst:.3e} at t = {t:.6g} exceeds {BLOWUP_THRESHOLD:.1e}", t=t)
    if not np.all(np.isfinite(rho)) or not np.all(np.isfinite(m)):
        raise BlowUpError(f"non-finite values at t = {t:.6g}", t=t)
    low = float(np.min(rho))
    if low < -1e-12:
        raise BlowUpError(f"density lost positivity (min rho = {low:.3e}) at t = {t:.6g}", t=t)


def _advance(rho, m, t, dt, grid, params, extra_source=None, with_ledger=False):
    """One classical RK4 step; returns (rho', m', dD, dW)."""
    k1r, k1m, d1, w1 = _rhs_core(rho, m, t, grid, params, extra_source, with_ledger)
    k2r, k2m, d2, w2 = _rhs_core(
        rho + 0.5 * dt * k1r, m + 0.5 * dt * k1m, t + 0.5 * dt, grid, params, extra_source, with_ledger
    )
    k3r, k3m, d3, w3 = _rhs_core(
        rho + 0.5 * dt * k2r, m + 0.5 * dt * k2m, t + 0.5 * dt, grid, params, extra_source, with_ledger
    )
    k4r, k4m, d4, w4 = _rhs_core(
        rho + dt * k3r, m + dt * k3m, t + dt, grid, params, extra_source, with_ledger
    )
    sixth = dt / 6.0
    rho_new = rho + sixth * (k1r + 2.0 * k2r + 2.0 * k3r + k4r)
    m_new = m + sixth * (k1m + 2.0 * k2m + 2.0 * k3m + k4m)
    dD = sixth * (d1 + 2.0 * d2 + 2.0 * d3 + d4)
    dW = sixth * (w1 + 2.0 * w2 + 2.0 * w3 + w4)
    _check_alive(rho_new, m_new, t + dt)
    return rho_new, m_new, dD, dW


def step(state: State, params: FluidParams, dt: float, extra_source=None) -> State:
    """Advance one RK4 step of size dt; mass is conserved to round-off."""
    if not (dt > 0 and math.isfinite(dt)):
        raise ValueError(f"dt must be positive and finite, got {dt}")
    rho, m, _, _ = _advance(
        state.rho.values, state.m.values, state.t, dt, state.grid, params, extra_source
    )
    return State(
        t=state.t + dt,
        rho=Field(grid=state.grid, values=rho),
        m=Field(grid=state.grid, values=m),
    )


def run(
    initial: State,
    params: FluidParams,
    T: float,
    snapshots: int = 16,
    cfl: float = 0.4,
    extra_source=None,
    dt_cap: float = None,
) -> RunResult:
    """Integrate over [t0, t0 + T] with a fixed dt locked to the initial
    CFL state, emitting `snapshots` equally spaced snapshot intervals.

    dt divides the snapshot spacing exactly, so snapshot timestamps are
    reproducible across runs sharing (dt, spacing).  dt_cap tightens the
    stability bound, letting several runs agree on one step size.
    """
    if not (T > 0 and math.isfinite(T)):
        raise ValueError(f"horizon T must be positive, got {T}")
    if snapshots < 1:
        raise ValueError(f"need at least one snapshot interval, got {snapshots}")
    if dt_cap is not None and not dt_cap > 0:
        raise ValueError(f"dt_cap must be positive, got {dt_cap}")
    if params.mu == 0.0:
        warnings.warn(
            "inviscid run (mu = 0): treat as an under-resolved reference only",
            RuntimeWarning,
            stacklevel=2,
        )
    grid = initial.grid
    spacing = T / snapshots
    dt_stable = cfl_dt(initial, params, cfl)
    if dt_cap is not None:
        dt_stable = min(dt_stable, dt_cap)
    per = max(1, math.ceil(spacing / dt_stable - 1e-12))
    dt = spacing / per

    rho = initial.rho.values.copy()
    m = initial.m.values.copy()
    t0 = initial.t
    states = [initial]
    E0 = total_energy(initial, params)
    mass0 = float(np.mean(rho))

    ts, Es, Ds, Ws = [t0], [E0], [0.0], [0.0]
    D_acc = W_acc = 0.0
    steps_done = 0
    for _snap in range(snapshots):
        for _ in range(per):
            t_now = t0 + steps_done * dt
            rho, m, dD, dW = _advance(
                rho, m, t_now, dt, grid, params, extra_source, with_ledger=True
            )
            D_acc += dD
            W_acc += dW
            steps_done += 1
        t_now = t0 + steps_done * dt
        st = State(t=t_now, rho=Field(grid=grid, values=rho), m=Field(grid=grid, values=m))
        states.append(st)
        ts.append(t_now)
        Es.append(total_energy(st, params))
        Ds.append(D_acc)
        Ws.append(W_acc)

    mass1 = float(np.mean(rho))
    scale = max(abs(mass0), 1e-300)
    if abs(mass1 - mass0) > 1e-10 * scale:
        raise RuntimeError(f"mass drifted by {abs(mass1 - mass0) / scale:.3e} relative")

    t_arr = np.array(ts)
    E_arr = np.array(Es)
    D_arr = np.array(Ds)
    W_arr = np.array(Ws)
    R_arr = E_arr + D_arr - E0 - W_arr
    report = EnergyReport(
        t=t_arr, E=E_arr, D=D_arr, W=W_arr, R=R_arr,
        E0=E0, M_T=float(np.max(E_arr + D_arr)),
    )
    return RunResult(
        series=SnapshotSeries(states=tuple(states)),
        report=report,
        dt=dt,
        steps_per_snapshot=per,
        params=params,
    )


def _hermitianize(coef):
    """Project complex lattice coefficients onto Hermitian symmetry."""
    flipped = coef.copy()
    for axis in range(coef.ndim):
        flipped = np.roll(np.flip(flipped, axis=axis), 1, axis=axis)
    return 0.5 * (coef + np.conj(flipped))


def _band_limited_noise(grid, rng, lo, hi):
    band = (grid.mode_norm >= lo) & (grid.mode_norm <= hi)
    coef = rng.standard_normal(grid.shape) + 1j * rng.standard_normal(grid.shape)
    coef = _hermitianize(coef * band)
    vals = np.real(np.fft.ifftn(coef))
    peak = float(np.max(np.abs(vals)))
    return vals / peak if peak > 0 else vals


def preset_ic(name: str, grid: PeriodicGrid, params: FluidParams, seed=None, amplitude: float = 1.0) -> State:
    """Named initial states.

    equilibrium    rho = 1, u = 0
    taylor-green   rho = 1 and the classical cellular vortex (2D/3D)
    acoustic-pulse rho = 1 + 0.1*amplitude*cos(k1.x), u = 0
    random-band    seeded noise confined to modes |k| <= n/8,
                   max |u| = amplitude/2, max drho = amplitude/10
    """
    two_pi = 2.0 * np.pi
    coords = grid.axes_coordinates()
    if name == "equilibrium":
        rho = np.ones(grid.shape)
        m = np.zeros((grid.d,) + grid.shape)
    elif name == "taylor-green":
        if grid.d == 1:
            raise ValueError("taylor-green needs d >= 2")
        X = two_pi * coords[0] / grid.P
        Y = two_pi * coords[1] / grid.P
        u = np.zeros((grid.d,) + grid.shape)
        if grid.d == 2:
            u[0] = amplitude * np.sin(X) * np.cos(Y)
            u[1] = -amplitude * np.cos(X) * np.sin(Y)
        else:
            Z = two_pi * coords[2] / grid.P
            u[0] = amplitude * np.sin(X) * np.cos(Y) * np.cos(Z)
            u[1] = -amplitude * np.cos(X) * np.sin(Y) * np.cos(Z)
        rho = np.ones(grid.shape)
        m = rho * u
    elif name == "acoustic-pulse":
        a = 0.1 * amplitude
        if a >= 1.0:
            raise ValueError(f"pulse amplitude {a} would drive density nonpositive")
        rho = 1.0 + a * np.cos(two_pi * coords[0] / grid.P + np.zeros(grid.shape))
        m = np.zeros((grid.d,) + grid.shape)
    elif name == "random-band":
        rng = np.random.default_rng(seed)
        hi = max(1.0, grid.n / 8.0)
        u = np.empty((grid.d,) + grid.shape)
        for a in range(grid.d):
            u[a] = 0.5 * amplitude * _band_limited_noise(grid, rng, 0.5, hi)
        drho = 0.1 * min(amplitude, 1.0) * _band_limited_noise(grid, rng, 0.5, hi)
        rho = 1.0 + drho
        m = rho * u
    else:
        raise ValueError(f"unknown preset {name!r}")
    return State(t=0.0, rho=Field(grid=grid, values=rho), m=Field(grid=grid, values=m))
