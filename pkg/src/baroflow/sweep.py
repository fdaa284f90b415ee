"""Vanishing-viscosity sweeps: rerun one flow while mu shrinks.

Every entry shares the grid, initial state, forcing and time step (the
most restrictive entry's stable dt caps all runs), so snapshot times
align exactly and run-to-run distances are meaningful.  Blow-ups mark
their entry as failed and leave the rest of the sweep usable.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .diagnostics import (
    AdmissibilityResult,
    default_test_functions,
    energy_admissibility,
    reynolds_quotient,
    time_integrated_spectrum,
    weak_residual_mass,
    weak_residual_momentum,
)
from .solver import (
    BlowUpError,
    FluidParams,
    ForcingSpec,
    RunResult,
    SnapshotSeries,
    cfl_dt,
    preset_ic,
    run,
)
from .fields import make_grid

__all__ = [
    "SweepPlan",
    "SweepEntry",
    "SweepResult",
    "CauchyTable",
    "SmallnessRow",
    "SmallnessTable",
    "LimitCandidateReport",
    "plan_sweep",
    "run_sweep",
    "series_distance",
    "cauchy_distances",
    "distances_to",
    "convergence_rate",
    "viscous_smallness",
    "limit_candidate_check",
]


@dataclass(frozen=True)
class SweepPlan:
    """Common setup plus the descending list of viscosities to visit.

    lam_ratio fixes the second viscosity as lam = lam_ratio * mu for
    every entry; it must exceed -2 so lam + 2 mu stays positive.
    """

    mu_values: tuple
    d: int = 2
    n: int = 64
    P: float = 2.0 * np.pi
    gamma: float = 1.4
    kappa: float = 1.0
    lam_ratio: float = -2.0 / 3.0
    ic: str = "taylor-green"
    ic_seed: int = None
    ic_amplitude: float = 1.0
    T: float = 1.0
    snapshots: int = 16
    cfl: float = 0.4
    forcing: ForcingSpec = ForcingSpec()

    def __post_init__(self):
        mus = tuple(float(v) for v in self.mu_values)
        if len(mus) < 2:
            raise ValueError("a sweep needs at least two viscosities")
        if any(v <= 0 for v in mus):
            raise ValueError("sweep viscosities must be positive")
        if any(b >= a for a, b in zip(mus, mus[1:])):
            raise ValueError("sweep viscosities must decrease strictly")
        if self.lam_ratio <= -2.0:
            raise ValueError(f"lam_ratio must exceed -2, got {self.lam_ratio}")
        if not (self.T > 0):
            raise ValueError(f"horizon T must be positive, got {self.T}")
        object.__setattr__(self, "mu_values", mus)

    def params_for(self, mu: float) -> FluidParams:
        return FluidParams(
            gamma=self.gamma, kappa=self.kappa, mu=mu,
            lam=self.lam_ratio * mu, forcing=self.forcing,
        )


def plan_sweep(mu_max: float, ratio: float, count: int, **kwargs) -> SweepPlan:
    """Geometric viscosity ladder mu_max * ratio^i, i = 0 .. count-1."""
    if not (mu_max > 0):
        raise ValueError(f"mu_max must be positive, got {mu_max}")
    if not (0.0 < ratio < 1.0):
        raise ValueError(f"ratio must lie in (0, 1), got {ratio}")
    if count < 2:
        raise ValueError(f"count must be at least 2, got {count}")
    mus = tuple(mu_max * ratio**i for i in range(count))
    return SweepPlan(mu_values=mus, **kwargs)


@dataclass(frozen=True)
class SweepEntry:
    mu: float
    params: FluidParams
    result: RunResult = None
    failure: str = None

    @property
    def completed(self) -> bool:
        return self.result is not None


@dataclass(frozen=True)
class SweepResult:
    plan: SweepPlan
    entries: tuple
    shared_dt: float

    @property
    def completed(self):
        return [e for e in self.entries if e.completed]

    @property
    def any_failed(self) -> bool:
        return any(not e.completed for e in self.entries)


def run_sweep(plan: SweepPlan) -> SweepResult:
    """Run every entry of the plan on one shared grid, state and dt."""
    grid = make_grid(plan.d, plan.n, plan.P)
    params0 = plan.params_for(plan.mu_values[0])
    initial = preset_ic(plan.ic, grid, params0, seed=plan.ic_seed, amplitude=plan.ic_amplitude)
    shared_stable = min(
        cfl_dt(initial, plan.params_for(mu), plan.cfl) for mu in plan.mu_values
    )
    spacing = plan.T / plan.snapshots
    per = max(1, math.ceil(spacing / shared_stable - 1e-12))
    shared_dt = spacing / per

    entries = []
    for mu in plan.mu_values:
        params = plan.params_for(mu)
        try:
            result = run(
                initial, params, plan.T,
                snapshots=plan.snapshots, cfl=plan.cfl, dt_cap=shared_stable,
            )
            entries.append(SweepEntry(mu=mu, params=params, result=result))
        except BlowUpError as exc:
            entries.append(SweepEntry(mu=mu, params=params, failure=str(exc)))
    return SweepResult(plan=plan, entries=tuple(entries), shared_dt=shared_dt)


def series_distance(a: SnapshotSeries, b: SnapshotSeries, p1: float, p2: float):
    """Space-time distances (||rho_a - rho_b||_p1, ||m_a - m_b||_p2).

    Trapezoid in time over identical snapshot grids; the momentum
    channel uses the pointwise Euclidean magnitude of the difference.
    """
    ta, tb = a.times, b.times
    if len(ta) != len(tb) or float(np.max(np.abs(ta - tb))) > 1e-12 * max(ta[-1], 1.0):
        raise ValueError("series must share their snapshot times")
    if a.grid != b.grid:
        raise ValueError("series must share one grid")
    grid = a.grid
    dxd = grid.dx**grid.d
    w = np.empty(len(ta))
    w[0] = 0.5 * (ta[1] - ta[0])
    w[-1] = 0.5 * (ta[-1] - ta[-2])
    if len(ta) > 2:
        w[1:-1] = 0.5 * (ta[2:] - ta[:-2])
    acc_r = acc_m = 0.0
    for sa, sb, wi in zip(a, b, w):
        dr = sa.rho.values - sb.rho.values
        dm = sa.m.values - sb.m.values
        acc_r += wi * float(np.sum(np.abs(dr) ** p1)) * dxd
        mmag = np.sqrt(np.sum(dm**2, axis=0))
        acc_m += wi * float(np.sum(mmag**p2)) * dxd
    return acc_r ** (1.0 / p1), acc_m ** (1.0 / p2)


@dataclass(frozen=True)
class CauchyTable:
    """Distances between runs at adjacent (or reference) viscosities."""

    mu_pairs: tuple
    rho_distances: np.ndarray
    m_distances: np.ndarray
    p1: float
    p2: float


def _distance_exponents(plan: SweepPlan, p1, p2):
    p1 = plan.gamma if p1 is None else float(p1)
    p2 = 2.0 if p2 is None else float(p2)
    if p1 < 1 or p2 < 1:
        raise ValueError(f"distance exponents must be >= 1, got ({p1}, {p2})")
    return p1, p2


def cauchy_distances(sweep: SweepResult, p1: float = None, p2: float = None) -> CauchyTable:
    """Distances between consecutive completed entries, largest mu first."""
    p1, p2 = _distance_exponents(sweep.plan, p1, p2)
    done = sweep.completed
    if len(done) < 2:
        raise ValueError(f"need at least two completed runs, have {len(done)}")
    pairs, dr, dm = [], [], []
    for a, b in zip(done, done[1:]):
        r, m = series_distance(a.result.series, b.result.series, p1, p2)
        pairs.append((a.mu, b.mu))
        dr.append(r)
        dm.append(m)
    return CauchyTable(
        mu_pairs=tuple(pairs), rho_distances=np.array(dr), m_distances=np.array(dm),
        p1=p1, p2=p2,
    )


def distances_to(sweep: SweepResult, reference: int = -1, p1: float = None, p2: float = None) -> CauchyTable:
    """Distance of every other completed run to one reference entry."""
    p1, p2 = _distance_exponents(sweep.plan, p1, p2)
    done = sweep.completed
    if len(done) < 2:
        raise ValueError(f"need at least two completed runs, have {len(done)}")
    ref = done[reference]
    pairs, dr, dm = [], [], []
    for e in done:
        if e is ref:
            continue
        r, m = series_distance(e.result.series, ref.result.series, p1, p2)
        pairs.append((e.mu, ref.mu))
        dr.append(r)
        dm.append(m)
    return CauchyTable(
        mu_pairs=tuple(pairs), rho_distances=np.array(dr), m_distances=np.array(dm),
        p1=p1, p2=p2,
    )


def convergence_rate(mu_values, distances) -> float:
    """Log-log slope of distance against mu.

    Returns inf when every distance is exactly zero (the runs already
    agree); zero distances are otherwise dropped from the fit.
    """
    mus = np.asarray(mu_values, dtype=np.float64)
    dist = np.asarray(distances, dtype=np.float64)
    if mus.shape != dist.shape:
        raise ValueError("mu_values and distances must align")
    if np.all(dist == 0.0):
        return float("inf")
    sel = dist > 0.0
    if np.sum(sel) < 2:
        raise ValueError("need at least two nonzero distances to fit a rate")
    return float(np.polyfit(np.log(mus[sel]), np.log(dist[sel]), 1)[0])


@dataclass(frozen=True)
class SmallnessRow:
    mu: float
    grad_u_l2: float
    mu_grad: float
    sqrt_mu_grad: float
    dissipation: float


@dataclass(frozen=True)
class SmallnessTable:
    """Viscous smallness across the sweep.

    mu_grad = mu * ||grad u||_{L^2 t,x} should shrink with mu while
    sqrt_mu_grad stays of one size; energy_bounded checks the honest
    inequality mu * ||grad u||^2 <= c * D(T) with c = 1 for
    lam >= -mu and mu/(2 mu + lam) otherwise.
    """

    rows: tuple
    mu_grad_decreasing: bool
    energy_bounded: bool


def viscous_smallness(sweep: SweepResult) -> SmallnessTable:
    rows = []
    bounded = True
    for e in sweep.completed:
        series = e.result.series
        grid = series.grid
        times = series.times
        axes = grid.spatial_axes()
        ik = grid.ik_deriv
        par = grid.dx**grid.d / float(grid.n**grid.d)
        g = []
        for st in series:
            u = st.m.values / np.maximum(st.rho.values, e.params.rho_min)
            u_h = np.fft.fftn(u, axes=axes)
            total = 0.0
            for a in range(grid.d):
                for b in range(grid.d):
                    total += float(np.sum(np.abs(ik[b] * u_h[a]) ** 2))
            g.append(total * par)
        grad_sq = float(np.trapezoid(np.array(g), x=times))
        grad_l2 = math.sqrt(max(grad_sq, 0.0))
        lam = e.params.lam
        mu = e.params.mu
        c = 1.0 if lam >= -mu else mu / (2.0 * mu + lam)
        d_total = float(e.result.report.D[-1])
        if mu * grad_sq > c * d_total * (1.0 + 1e-6) + 1e-12:
            bounded = False
        rows.append(SmallnessRow(
            mu=mu, grad_u_l2=grad_l2, mu_grad=mu * grad_l2,
            sqrt_mu_grad=math.sqrt(mu) * grad_l2, dissipation=d_total,
        ))
    vals = [r.mu_grad for r in rows]
    decreasing = all(b < a for a, b in zip(vals, vals[1:]))
    return SmallnessTable(rows=tuple(rows), mu_grad_decreasing=decreasing, energy_bounded=bounded)


@dataclass(frozen=True)
class LimitCandidateReport:
    """Weak-solution scorecard for the least viscous completed run.

    Residuals are listed per test function; mass_max / ns_max /
    euler_max normalize the largest residual of each family by the
    family's largest gross scale, the size of the numbers summed
    before any cancellation.  Normalizing by the post-cancellation
    quadrature scale instead turns into noise over noise whenever the
    flow is orthogonal to the whole test set (a symmetric flow on the
    default low-mode set does exactly that), and would veto a run
    whose residuals sit at machine round-off.  The verdict requires
    small mass and full-equation residuals plus admissible energy;
    euler_max is reported as the vanishing-viscosity deficit (it
    equals the measured viscous term, shrinking with mu) rather than
    gated, since it only vanishes in the limit.
    """

    mu: float
    mass_residuals: tuple
    euler_residuals: tuple
    ns_residuals: tuple
    viscous_terms: tuple
    quadrature_scales: tuple
    gross_scales: tuple
    mass_max: float
    ns_max: float
    euler_max: float
    admissibility: AdmissibilityResult
    vacuum_fraction: float
    m_t: float
    rel_tol: float
    plausible_limit: bool


def limit_candidate_check(
    sweep: SweepResult,
    test_functions=None,
    vector_test_functions=None,
    theta: float = 1e-6,
    rel_tol: float = 1e-4,
) -> LimitCandidateReport:
    """Judge whether the smallest-mu run looks like a weak limit point.

    Checks weak mass and momentum residuals against a deterministic
    low-mode test set, energy admissibility from the run ledger, the
    vacuum fraction of the final state, and the decay-bound constant
    of the time-integrated spectrum.
    """
    done = sweep.completed
    if not done:
        raise ValueError("no completed runs to check")
    entry = done[-1]
    series = entry.result.series
    grid = series.grid
    T = series.times[-1] - series.times[0]
    if test_functions is None:
        test_functions = default_test_functions(grid, T)
    if vector_test_functions is None:
        vector_test_functions = default_test_functions(grid, T, vector=True)

    mass_res, mass_gross = [], []
    for phi in test_functions:
        res, _, gross = weak_residual_mass(series, phi, series[0].rho, with_scale=True)
        mass_res.append(res)
        mass_gross.append(gross)
    euler_res, ns_res, visc_terms, scales, grosses = [], [], [], [], []
    for phi in vector_test_functions:
        r = weak_residual_momentum(series, entry.params, phi, series[0].m)
        euler_res.append(r.euler_residual)
        ns_res.append(r.ns_residual)
        visc_terms.append(r.viscous_term)
        scales.append(r.quadrature_scale)
        grosses.append(r.roundoff_scale)

    adm = energy_admissibility(series, entry.params, work=entry.result.report.W)
    quo = reynolds_quotient(series[-1], theta)
    ss = time_integrated_spectrum(series, entry.params)
    shells = np.arange(1, grid.n // 3 + 1, dtype=np.float64)
    m_t = float(np.max(shells ** (5.0 / 3.0) * ss.integrated_energy[1 : grid.n // 3 + 1]))

    mass_max = max(abs(r) for r in mass_res) / max(max(mass_gross), 1e-300)
    ns_max = max(abs(r) for r in ns_res) / max(max(grosses), 1e-300)
    euler_max = max(abs(r) for r in euler_res) / max(max(grosses), 1e-300)
    plausible = bool(
        mass_max <= rel_tol
        and ns_max <= rel_tol
        and adm.admissible
        and math.isfinite(m_t)
    )
    return LimitCandidateReport(
        mu=entry.mu,
        mass_residuals=tuple(mass_res),
        euler_residuals=tuple(euler_res),
        ns_residuals=tuple(ns_res),
        viscous_terms=tuple(visc_terms),
        quadrature_scales=tuple(scales),
        gross_scales=tuple(grosses),
        mass_max=mass_max,
        ns_max=ns_max,
        euler_max=euler_max,
        admissibility=adm,
        vacuum_fraction=quo.vacuum_fraction,
        m_t=m_t,
        rel_tol=rel_tol,
        plausible_limit=plausible,
    )
