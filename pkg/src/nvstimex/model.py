"""Three-level rate-equation model of the NV- centre under CW pumping and
pulsed stimulating light.

Levels: |1> ground state, |2> excited state, |3> phonon-added ground state.

    dP1/dt = -[g + r2(t)] P1 + L21 P2 + L31 P3
    dP2/dt =  [g + r2(t)] P1 - [L21 + L23 + r(t)] P2 + r(t) P3
    dP3/dt =  [L23 + r(t)] P2 - [L31 + r(t)] P3

g is the CW pump rate, r(t) the stimulated-emission rate on |2> <-> |3>
and r2(t) an optional weak excitation |1> -> |2> by the same pulse.

The phonon decay L31 (~1 THz) makes the system stiff against the ns
dynamics.  Time evolution is split accordingly: inside a window of
+-6 sigma around each pulse centre the linear system is integrated with an
implicit Runge-Kutta method (Radau) using steps no larger than
``max_pulse_step``; between windows the coefficients are constant and the
state is propagated exactly with a matrix exponential.  Both pieces work on
the reduced coordinates (P2, P3, 1) with P1 = 1 - P2 - P3, so conservation
of probability holds by construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.integrate import solve_ivp
from scipy.linalg import expm

from .errors import ConvergenceError, DomainError, IntegrationError

# Exact SI values (2019 redefinition).
PLANCK = 6.62607015e-34  # J s
LIGHT_SPEED = 299792458.0  # m / s
ELEMENTARY_CHARGE = 1.602176634e-19  # C

STIMULATED = "stimulated"
EXCITATION = "excitation"

# Pulses are treated as zero outside +-WINDOW_SIGMAS standard deviations.
WINDOW_SIGMAS = 6.0
# Negative populations above this magnitude indicate integrator failure.
CLAMP_LIMIT = 1e-12
PERIODIC_THRESHOLD = 1e-8


def photon_energy(wavelength_nm):
    """Photon energy in eV for a vacuum wavelength in nm."""
    wavelength_nm = np.asarray(wavelength_nm, dtype=float)
    if np.any(~(wavelength_nm > 0)):
        raise DomainError("wavelength must be positive")
    energy = PLANCK * LIGHT_SPEED / (wavelength_nm * 1e-9) / ELEMENTARY_CHARGE
    return float(energy) if energy.ndim == 0 else energy


def rate_from_intensity(cross_section, power, area, wavelength_nm):
    """Transition rate (Hz) driven by light of ``power`` (W) focused on
    ``area`` (m^2), for a transition of ``cross_section`` (m^2).

    The photon flux density P / (A hbar omega) times the cross-section.
    Use the peak power for pulsed light.
    """
    if not cross_section > 0:
        raise DomainError("cross_section must be positive")
    if not area > 0:
        raise DomainError("area must be positive")
    if not power >= 0:
        raise DomainError("power must be non-negative")
    joules = photon_energy(wavelength_nm) * ELEMENTARY_CHARGE
    return cross_section * power / (area * joules)


@dataclass(frozen=True)
class RateConstants:
    """Spontaneous (l21, l23) and phonon (l31) decay rates in Hz."""

    l21: float = 65.3e6
    l23: float = 18e6
    l31: float = 1e12

    def __post_init__(self):
        for name in ("l21", "l23", "l31"):
            if not getattr(self, name) >= 0:
                raise DomainError(f"{name} must be non-negative")
        if not (self.l31 > self.l21 and self.l31 > self.l23):
            raise DomainError("l31 must exceed l21 and l23 (fast phonon decay)")


@dataclass(frozen=True)
class PumpDrive:
    green_rate: float

    def __post_init__(self):
        if not self.green_rate >= 0:
            raise DomainError("green_rate must be non-negative")


@dataclass(frozen=True)
class PulseTrain:
    """Periodic Gaussian pulses described by square-pulse-equivalent rates.

    ``eq_rate`` is the stimulated-emission rate a square pulse of width
    ``eq_width`` would need to deliver the same time-integrated rate as one
    Gaussian pulse of standard deviation ``sigma_t``.  ``red2_rate`` does the
    same for the ground-state excitation channel (0 disables it).
    """

    eq_rate: float
    period: float
    sigma_t: float = 6e-12
    eq_width: float = 6e-12
    red2_rate: float = 0.0
    t0: float = 1e-9

    def __post_init__(self):
        if not (self.eq_rate >= 0 and self.red2_rate >= 0):
            raise DomainError("pulse rates must be non-negative")
        if not (self.period > 0 and self.sigma_t > 0 and self.eq_width > 0):
            raise DomainError("period, sigma_t and eq_width must be positive")
        if 2 * WINDOW_SIGMAS * self.sigma_t > self.period:
            raise DomainError("pulse support (+-6 sigma_t) does not fit in one period")
        if not math.isfinite(self.t0):
            raise DomainError("t0 must be finite")

    @property
    def half_window(self):
        return WINDOW_SIGMAS * self.sigma_t

    @property
    def active(self):
        return self.eq_rate > 0 or self.red2_rate > 0

    def peak(self, channel=STIMULATED):
        rate = _channel_rate(self, channel)
        return rate * self.eq_width / (self.sigma_t * math.sqrt(2 * math.pi))

    def nearest_centre(self, t):
        return self.t0 + np.round((np.asarray(t, dtype=float) - self.t0) / self.period) * self.period

    def centres_between(self, t_a, t_b):
        """Centres of all pulses whose window intersects (t_a, t_b)."""
        k_lo = math.floor((t_a - self.half_window - self.t0) / self.period)
        k_hi = math.ceil((t_b + self.half_window - self.t0) / self.period)
        out = []
        for k in range(k_lo, k_hi + 1):
            c = self.t0 + k * self.period
            if c + self.half_window > t_a and c - self.half_window < t_b:
                out.append(c)
        return out


def _channel_rate(pulses, channel):
    if channel == STIMULATED:
        return pulses.eq_rate
    if channel == EXCITATION:
        return pulses.red2_rate
    raise DomainError(f"unknown pulse channel {channel!r}")


@dataclass(frozen=True)
class PopulationState:
    p1: float
    p2: float
    p3: float

    def __post_init__(self):
        values = (self.p1, self.p2, self.p3)
        if any(not (-CLAMP_LIMIT <= v <= 1 + CLAMP_LIMIT) for v in values):
            raise DomainError(f"populations must lie in [0, 1], got {values}")
        if abs(sum(values) - 1.0) > 1e-9:
            raise DomainError(f"populations must sum to 1, got {sum(values)!r}")

    @classmethod
    def ground(cls):
        return cls(1.0, 0.0, 0.0)

    def as_array(self):
        return np.array([self.p1, self.p2, self.p3])


@dataclass(frozen=True)
class ModelParams:
    rates: RateConstants = field(default_factory=RateConstants)
    pump: PumpDrive = field(default_factory=lambda: PumpDrive(0.0))
    pulses: PulseTrain | None = None

    def without_pulses(self):
        return replace(self, pulses=None)

    def with_green_rate(self, green_rate):
        return replace(self, pump=PumpDrive(green_rate))

    def with_pulses(self, **changes):
        if self.pulses is None:
            raise DomainError("parameters carry no pulse train")
        return replace(self, pulses=replace(self.pulses, **changes))

    @property
    def max_rate(self):
        rates = [self.rates.l21, self.rates.l23, self.rates.l31, self.pump.green_rate]
        if self.pulses is not None:
            rates += [self.pulses.peak(STIMULATED), self.pulses.peak(EXCITATION)]
        return max(rates)


@dataclass(frozen=True)
class IntegratorControls:
    """Tolerances and output sampling for :func:`integrate`.

    ``sample_dt`` is the uniform reporting grid (0.1 ns by default, the
    resolution of typical time-correlated photon counting), and
    ``pulse_sample_dt`` the spacing of the extra dense points reported
    inside each pulse window.
    """

    rtol: float = 1e-8
    atol: float = 1e-12
    max_pulse_step: float = 0.5e-12
    sample_dt: float = 1e-10
    pulse_sample_dt: float = 1e-12

    def __post_init__(self):
        for name in ("rtol", "atol", "max_pulse_step", "sample_dt", "pulse_sample_dt"):
            if not getattr(self, name) > 0:
                raise DomainError(f"{name} must be positive")

    def tightened(self, factor):
        return replace(self, rtol=self.rtol / factor, atol=self.atol / factor)


@dataclass(frozen=True, eq=False)
class Trajectory:
    """Populations sampled at strictly increasing times.

    ``populations`` has shape (n, 3).  ``on_grid`` marks the samples that
    belong to the uniform reporting grid; the others are the dense points
    inside pulse windows.  Pulse-train runs also carry the states at period
    boundaries and whether a periodic steady state was reached.
    """

    times: np.ndarray
    populations: np.ndarray
    emission: np.ndarray
    on_grid: np.ndarray
    boundary_states: np.ndarray | None = None
    periodic: bool | None = None

    def __post_init__(self):
        n = len(self.times)
        if self.populations.shape != (n, 3) or len(self.emission) != n or len(self.on_grid) != n:
            raise DomainError("trajectory arrays have inconsistent lengths")
        if n > 1 and np.any(np.diff(self.times) <= 0):
            raise DomainError("trajectory times must be strictly increasing")
        for arr in (self.times, self.populations, self.emission, self.on_grid):
            arr.flags.writeable = False

    def __len__(self):
        return len(self.times)

    @property
    def states(self):
        return [PopulationState(*row) for row in self.populations]

    @property
    def final_state(self):
        return PopulationState(*self.populations[-1])

    def select(self, mask):
        mask = np.asarray(mask, dtype=bool)
        return Trajectory(
            self.times[mask].copy(),
            self.populations[mask].copy(),
            self.emission[mask].copy(),
            self.on_grid[mask].copy(),
        )

    def sampled(self):
        """Only the uniform-grid samples."""
        return self.select(self.on_grid)

    def between(self, t_a, t_b):
        return self.select((self.times >= t_a) & (self.times <= t_b))

    def shifted(self, dt):
        return Trajectory(
            self.times + dt,
            self.populations.copy(),
            self.emission.copy(),
            self.on_grid.copy(),
            self.boundary_states,
            self.periodic,
        )


# --------------------------------------------------------------------------
# Rates and right-hand sides


def pulse_rate_at(pulses, t, channel=STIMULATED):
    """Instantaneous Gaussian rate of the pulse nearest to ``t`` (Hz)."""
    rate = _channel_rate(pulses, channel)
    t = np.asarray(t, dtype=float)
    if rate == 0:
        out = np.zeros_like(t)
    else:
        dt = t - pulses.nearest_centre(t)
        out = pulses.peak(channel) * np.exp(-0.5 * (dt / pulses.sigma_t) ** 2)
    return float(out) if out.ndim == 0 else out


def _drive(params, t):
    """(pump + excitation, stimulated) rates at time t."""
    g = params.pump.green_rate
    p = params.pulses
    if p is None:
        return g, 0.0
    return g + pulse_rate_at(p, t, EXCITATION), pulse_rate_at(p, t, STIMULATED)


def derivatives(state, t, params):
    """Time derivatives (dP1, dP2, dP3) of the populations at time ``t``."""
    if isinstance(state, PopulationState):
        p1, p2, p3 = state.p1, state.p2, state.p3
    else:
        p1, p2, p3 = state
    g, r = _drive(params, t)
    rc = params.rates
    up = g * p1
    spont = rc.l21 * p2
    down = (rc.l23 + r) * p2 - r * p3
    phonon = rc.l31 * p3
    return np.array([-up + spont + phonon, up - spont - down, down - phonon])


def _reduced_generator(rates, g, r):
    """Generator acting on (P2, P3, 1) with P1 eliminated."""
    return np.array(
        [
            [-(g + rates.l21 + rates.l23 + r), r - g, g],
            [rates.l23 + r, -(rates.l31 + r), 0.0],
            [0.0, 0.0, 0.0],
        ]
    )


# --------------------------------------------------------------------------
# Steady states


def steady_state_analytic(rates, pump):
    """Closed-form pulse-free steady state."""
    g = pump.green_rate
    if g == 0:
        return PopulationState.ground()
    branch = rates.l23 / rates.l31
    p2 = 1.0 / (1.0 + (rates.l21 + rates.l23) / g + branch)
    p3 = branch * p2
    return PopulationState(1.0 - p2 - p3, p2, p3)


def relax_to_steady(params, tol=1e-9, horizon=1e-3):
    """Integrate the pulse-free system from the ground state to rest.

    Stops once max |dP/dt| < tol * k_min, where k_min is the smallest
    non-zero rate constant, so the remaining distance to equilibrium is of
    order tol.
    """
    if params.pulses is not None and params.pulses.active:
        raise DomainError("relax_to_steady requires a pulse-free model")
    if params.pump.green_rate == 0:
        return PopulationState.ground()
    rc = params.rates
    g = params.pump.green_rate
    jac = np.array(
        [[-g, rc.l21, rc.l31], [g, -(rc.l21 + rc.l23), 0.0], [0.0, rc.l23, -rc.l31]]
    )
    scale = min(r for r in (g, rc.l21, rc.l23, rc.l31) if r > 0)
    threshold = tol * scale

    def rhs(t, y):
        return jac @ y

    def settled(t, y):
        return np.max(np.abs(jac @ y)) - threshold

    settled.terminal = True
    settled.direction = -1

    sol = solve_ivp(
        rhs, (0.0, horizon), [1.0, 0.0, 0.0], method="Radau", jac=jac,
        rtol=1e-12, atol=1e-16, events=settled,
    )
    if sol.status == -1:
        raise IntegrationError(sol.message, sol.t[-1])
    if sol.status != 1:
        raise ConvergenceError(f"no steady state within {horizon:g} s")
    y = _clean(sol.y_events[0][-1:, 1:], sol.t_events[0][-1])[0]
    return PopulationState(float(1.0 - y[0] - y[1]), float(y[0]), float(y[1]))


# --------------------------------------------------------------------------
# Time integration


def _clean(reduced, t_fail):
    """Clamp roundoff negatives of (P2, P3, ...) rows; reject real ones."""
    p = reduced[:, :2]
    p1 = 1.0 - p[:, 0] - p[:, 1]
    worst = min(p.min(initial=0.0), p1.min(initial=0.0))
    if worst < -CLAMP_LIMIT:
        raise IntegrationError(f"negative population {worst:.3g}", t_fail)
    return np.clip(p, 0.0, 1.0)


def _output_times(t_a, t_b, params, controls):
    """Uniform grid anchored at t_a plus dense points in pulse windows."""
    n = int(math.floor((t_b - t_a) / controls.sample_dt * (1 + 1e-12)))
    grid = t_a + controls.sample_dt * np.arange(n + 1)
    near_end = np.abs(grid - t_b) <= 1e-9 * controls.sample_dt
    grid[near_end] = t_b
    grid = grid[grid <= t_b]
    times = [grid]
    flags = [np.ones(len(grid), dtype=bool)]
    p = params.pulses
    if p is not None and p.active:
        m = int(math.floor(p.half_window / controls.pulse_sample_dt * (1 + 1e-12)))
        offsets = controls.pulse_sample_dt * np.arange(-m, m + 1)
        for c in p.centres_between(t_a, t_b):
            pts = c + offsets
            pts = pts[(pts > t_a) & (pts < t_b)]
            times.append(pts)
            flags.append(np.zeros(len(pts), dtype=bool))
    if grid[-1] < t_b:
        times.append(np.array([t_b]))
        flags.append(np.zeros(1, dtype=bool))
    t = np.concatenate(times)
    f = np.concatenate(flags)
    order = np.argsort(t, kind="mergesort")
    t, f = t[order], f[order]
    # Merge coincident points; a grid flag on either copy wins.
    keep = np.ones(len(t), dtype=bool)
    tiny = 1e-9 * min(controls.sample_dt, controls.pulse_sample_dt)
    dup = np.flatnonzero(np.diff(t) <= tiny)
    for i in dup[::-1]:
        f[i] = f[i] or f[i + 1]
        keep[i + 1] = False
    return t[keep], f[keep]


def _pieces(t_a, t_b, params):
    """Split [t_a, t_b] into (start, end, in_pulse) pieces."""
    p = params.pulses
    edges = []
    if p is not None and p.active:
        for c in p.centres_between(t_a, t_b):
            edges.append((max(t_a, c - p.half_window), min(t_b, c + p.half_window)))
    out = []
    cursor = t_a
    for lo, hi in edges:
        if lo > cursor:
            out.append((cursor, lo, False))
        out.append((max(lo, cursor), hi, True))
        cursor = hi
    if cursor < t_b:
        out.append((cursor, t_b, False))
    return out


def _gap_propagators(params, dts):
    gen = _reduced_generator(params.rates, params.pump.green_rate, 0.0)
    if len(dts) == 0:
        return np.empty((0, 3, 3))
    return expm(gen[None, :, :] * np.asarray(dts)[:, None, None])


def _pulse_propagators(params, t_a, t_b, eval_times, controls):
    """Propagators from t_a to each of eval_times (last must be t_b)."""
    rc = params.rates
    p = params.pulses
    g0 = params.pump.green_rate
    peak_r = p.peak(STIMULATED)
    peak_x = p.peak(EXCITATION)
    centre = float(p.nearest_centre(0.5 * (t_a + t_b)))
    inv_2s2 = 0.5 / p.sigma_t**2
    base = _reduced_generator(rc, g0, 0.0)
    # d gen / d r and d gen / d g for the time-dependent parts.
    d_r = np.array([[-1.0, 1.0, 0.0], [1.0, -1.0, 0.0], [0.0, 0.0, 0.0]])
    d_g = np.array([[-1.0, -1.0, 1.0], [0.0, 0.0, 0.0], [0.0, 0.0, 0.0]])

    def gen(t):
        shape = math.exp(-inv_2s2 * (t - centre) ** 2)
        return base + (peak_r * shape) * d_r + (peak_x * shape) * d_g

    def rhs(t, y):
        return (gen(t) @ y.reshape(3, 3)).ravel()

    def jac(t, y):
        return np.kron(gen(t), np.eye(3))

    sol = solve_ivp(
        rhs, (t_a, t_b), np.eye(3).ravel(), method="Radau", jac=jac,
        t_eval=eval_times, rtol=controls.rtol, atol=controls.atol,
        max_step=controls.max_pulse_step,
    )
    if sol.status != 0:
        raise IntegrationError(sol.message, sol.t[-1] if len(sol.t) else t_a)
    return sol.y.T.reshape(-1, 3, 3)


def _propagators(params, t_a, t_b, times, controls):
    """Reduced-coordinate propagators Phi(t, t_a) for every t in times.

    ``times`` must be sorted and lie in [t_a, t_b].  Returns (phis, phi_end)
    with phi_end = Phi(t_b, t_a).
    """
    phis = np.empty((len(times), 3, 3))
    current = np.eye(3)
    first = np.searchsorted(times, t_a, side="right")
    phis[:first] = current
    for lo, hi, in_pulse in _pieces(t_a, t_b, params):
        stop = np.searchsorted(times, hi, side="right")
        inside = times[first:stop]
        if in_pulse:
            eval_t = np.append(inside, hi) if (len(inside) == 0 or inside[-1] < hi) else inside
            local = _pulse_propagators(params, lo, hi, eval_t, controls)
        else:
            local = _gap_propagators(params, np.append(inside - lo, hi - lo))
        phis[first:stop] = local[: len(inside)] @ current
        current = local[-1] @ current
        first = stop
    return phis, current


def _trajectory_from_reduced(times, reduced, on_grid, **extra):
    p = _clean(reduced, times[0])
    pops = np.column_stack([1.0 - p[:, 0] - p[:, 1], p[:, 0], p[:, 1]])
    return Trajectory(times, pops, pops[:, 1].copy(), on_grid, **extra)


def _reduced(state):
    return np.array([state.p2, state.p3, 1.0])


def integrate(state0, params, t_span, controls=None, t_eval=None):
    """Evolve ``state0`` over ``t_span``.

    Output is the uniform ``controls.sample_dt`` grid anchored at
    ``t_span[0]`` plus dense points inside every pulse window, unless
    ``t_eval`` gives explicit output times (all treated as grid points).
    """
    controls = controls or IntegratorControls()
    t_a, t_b = map(float, t_span)
    if not t_b > t_a:
        raise DomainError("t_span must be increasing")
    if t_eval is None:
        times, on_grid = _output_times(t_a, t_b, params, controls)
    else:
        times = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(times) <= 0) or times[0] < t_a or times[-1] > t_b:
            raise DomainError("t_eval must be increasing and inside t_span")
        on_grid = np.ones(len(times), dtype=bool)
    phis, _ = _propagators(params, t_a, t_b, times, controls)
    return _trajectory_from_reduced(times, phis @ _reduced(state0), on_grid)


def simulate_pulse_train(params, n_pulses, controls=None, *, stop_when_periodic=False, t_eval=None):
    """Run ``n_pulses`` repetition periods starting from the CW steady state.

    Period k covers [k T, (k+1) T].  Every period has the same relative
    pulse layout, so the one-period propagators are computed once and
    reused.  The returned trajectory records the states at period
    boundaries and whether the boundary state changed by less than 1e-8
    over the final period.  ``t_eval`` (times in [0, T)) replaces the
    default per-period output grid.
    """
    if params.pulses is None:
        raise DomainError("simulate_pulse_train needs a pulse train")
    if n_pulses < 1:
        raise DomainError("n_pulses must be at least 1")
    controls = controls or IntegratorControls()
    period = params.pulses.period
    z = _reduced(steady_state_analytic(params.rates, params.pump))
    if t_eval is None:
        rel, flags = _output_times(0.0, period, params, controls)
        # The period start is reported once, from the previous period's end.
        rel, flags = rel[1:], flags[1:]
        chunks, times, grid = [z[None, :]], [np.zeros(1)], [np.ones(1, dtype=bool)]
    else:
        rel = np.asarray(t_eval, dtype=float)
        if np.any(np.diff(rel) <= 0) or rel[0] < 0 or rel[-1] >= period:
            raise DomainError("t_eval must be increasing and inside [0, period)")
        flags = np.ones(len(rel), dtype=bool)
        chunks, times, grid = [], [], []
    phis, phi_period = _propagators(params, 0.0, period, rel, controls)
    boundaries = [z]
    periodic = False
    for k in range(n_pulses):
        chunks.append(phis @ z)
        times.append(k * period + rel)
        grid.append(flags)
        z = phi_period @ z
        z[2] = 1.0
        boundaries.append(z)
        periodic = bool(np.max(np.abs(boundaries[-1] - boundaries[-2])[:2]) < PERIODIC_THRESHOLD)
        if stop_when_periodic and periodic:
            break
    b = _clean(np.array(boundaries), period * (len(boundaries) - 1))
    boundary_states = np.column_stack([1.0 - b[:, 0] - b[:, 1], b[:, 0], b[:, 1]])
    return _trajectory_from_reduced(
        np.concatenate(times), np.concatenate(chunks), np.concatenate(grid),
        boundary_states=boundary_states, periodic=periodic,
    )


def last_period(traj, period):
    """Final repetition period of a pulse-train run, times shifted to [0, T]."""
    if traj.boundary_states is None:
        raise DomainError("trajectory does not come from a pulse-train run")
    n = len(traj.boundary_states) - 1
    start = (n - 1) * period
    part = traj.between(start - 1e-9 * period, traj.times[-1])
    out = part.shifted(-start)
    return Trajectory(out.times, out.populations, out.emission, out.on_grid,
                      traj.boundary_states, traj.periodic)


# --------------------------------------------------------------------------
# Emission


def emission_signal(traj):
    """Signal proportional to detected spontaneous emission (P2)."""
    return np.asarray(traj.emission)


def relative_emission(traj, baseline):
    if not baseline > 0:
        raise DomainError("baseline must be positive")
    return emission_signal(traj) / baseline


def min_relative_emission(trace, n_avg=10):
    """Mean of the ``n_avg`` samples starting at the trace minimum.

    Mirrors reading the emission level right after the pulse from data
    binned on a uniform grid; pass grid samples only.
    """
    trace = np.asarray(trace, dtype=float)
    if n_avg < 1:
        raise DomainError("n_avg must be at least 1")
    if len(trace) < n_avg:
        raise DomainError(f"trace has {len(trace)} samples, fewer than n_avg={n_avg}")
    i = int(np.argmin(trace))
    i = min(i, len(trace) - n_avg)
    return float(np.mean(trace[i : i + n_avg]))
