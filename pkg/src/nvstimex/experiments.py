"""Computational experiments on the rate model: wavelength and pump-power
sweeps, recovery-time extraction and least-squares parameter fitting."""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, field, replace

import numpy as np
from scipy.optimize import curve_fit, least_squares

from .errors import ConvergenceError, DomainError, FitError, FitQualityError
from .model import (
    IntegratorControls,
    ModelParams,
    PulseTrain,
    PumpDrive,
    RateConstants,
    last_period,
    min_relative_emission,
    simulate_pulse_train,
    steady_state_analytic,
)
from .spectra import SpectrumKind, band_average, rate_curve_from_spectrum

# Pump rates of the lowest and highest green power in the power-dependence
# measurement; intermediate powers are unpublished and spaced geometrically.
PUMP_POWER_RANGE_HZ = (8.8e6, 141e6)
DEFAULT_GREEN_RATES_HZ = tuple(np.geomspace(*PUMP_POWER_RANGE_HZ, 5))

MAX_PULSES = 60


def pump_power_params(green_rate=PUMP_POWER_RANGE_HZ[1], **pulse_changes):
    """Parameters of the pump-power experiment: 13 GHz stimulated rate,
    0.85 GHz pulse excitation, 10 MHz repetition."""
    pulses = PulseTrain(eq_rate=13e9, period=100e-9, red2_rate=0.85e9)
    if pulse_changes:
        pulses = replace(pulses, **pulse_changes)
    return ModelParams(RateConstants(), PumpDrive(green_rate), pulses)


def wavelength_base_params(green_rate=92e6):
    """Parameters of the wavelength experiment: 92 MHz pump, 40 MHz repetition."""
    return ModelParams(RateConstants(), PumpDrive(green_rate), PulseTrain(eq_rate=0.0, period=25e-9))


@dataclass(frozen=True, eq=False)
class EmissionTrace:
    """Relative emission over one period of the periodic steady state.

    Times run from the start of the period (0) to its end; ``on_grid``
    marks the uniform-grid samples.
    """

    times: np.ndarray
    values: np.ndarray
    on_grid: np.ndarray
    params: ModelParams
    baseline: float

    @property
    def pulse_time(self):
        p = self.params.pulses
        return p.t0 % p.period

    def minimum(self):
        """Pointwise minimum over all samples, dense pulse points included."""
        return float(self.values.min())

    def extracted_minimum(self, n_avg=10):
        """Emission level right after the pulse read from grid samples."""
        return min_relative_emission(self.values[self.on_grid], n_avg)

    def sampled(self):
        return self.times[self.on_grid], self.values[self.on_grid]


def periodic_response(params, controls=None, max_pulses=MAX_PULSES):
    """Relative emission over one period once the pulse train is periodic.

    Normalised to the CW steady-state emission of the same pump rate.
    """
    traj = simulate_pulse_train(params, max_pulses, controls, stop_when_periodic=True)
    if not traj.periodic:
        raise ConvergenceError(f"no periodic steady state within {max_pulses} pulses")
    one = last_period(traj, params.pulses.period)
    baseline = steady_state_analytic(params.rates, params.pump).p2
    if not baseline > 0:
        raise DomainError("CW emission is zero; relative emission undefined")
    return EmissionTrace(one.times, one.emission / baseline, one.on_grid, params, baseline)


# --------------------------------------------------------------------------
# Sweeps


@dataclass(frozen=True, eq=False)
class SweepResult:
    axis_name: str
    axis: np.ndarray
    metric_name: str
    metric: np.ndarray
    params: tuple = field(default_factory=tuple)

    def __post_init__(self):
        if len(self.axis) != len(self.metric):
            raise DomainError("axis and metric lengths differ")
        if self.params and len(self.params) != len(self.axis):
            raise DomainError("one ModelParams per sweep point required")

    @property
    def argmin(self):
        return float(self.axis[int(np.argmin(self.metric))])


def power_rescale(metric_reduction, measured_power, reference_power):
    """Scale an emission reduction measured at ``measured_power`` to
    ``reference_power`` assuming it is linear in power (small signal)."""
    if not (measured_power > 0 and reference_power > 0):
        raise DomainError("powers must be positive")
    return metric_reduction * (reference_power / measured_power)


def wavelength_sweep(
    spectrum,
    base,
    centres,
    bandwidth=20.0,
    anchor_rate=6e9,
    anchor_wavelength=682.0,
    *,
    powers=None,
    reference_power=None,
    controls=None,
    n_avg=10,
    max_pulses=MAX_PULSES,
):
    """Minimum relative emission as a function of pulse centre wavelength.

    The stimulated rate at each centre is the rate curve (spectrum anchored
    to ``anchor_rate`` at ``anchor_wavelength``) averaged over the pulse
    band.  When per-centre ``powers`` are given, each reduction is rescaled
    to ``reference_power``.
    """
    if base.pulses is None:
        raise DomainError("base parameters need a pulse train")
    if spectrum.kind != SpectrumKind.EMISSION:
        raise DomainError("wavelength_sweep expects an emission spectrum")
    centres = np.sort(np.asarray(centres, dtype=float))
    if powers is not None:
        powers = np.asarray(powers, dtype=float)
        if len(powers) != len(centres) or reference_power is None:
            raise DomainError("powers need one entry per centre and a reference_power")
    rate_curve = rate_curve_from_spectrum(spectrum, anchor_rate, anchor_wavelength)
    metric = []
    used = []
    for i, centre in enumerate(centres):
        params = base.with_pulses(eq_rate=band_average(rate_curve, centre, bandwidth))
        trace = periodic_response(params, controls, max_pulses)
        value = trace.extracted_minimum(n_avg)
        if powers is not None:
            value = 1.0 - power_rescale(1.0 - value, powers[i], reference_power)
        metric.append(value)
        used.append(params)
    return SweepResult("wavelength_nm", centres, "min_relative_emission", np.array(metric), tuple(used))


def power_sweep(base, green_rates=DEFAULT_GREEN_RATES_HZ, controls=None, max_pulses=MAX_PULSES):
    """One periodic relative-emission trace per pump rate, sorted by rate."""
    if base.pulses is None:
        raise DomainError("base parameters need a pulse train")
    rates = np.sort(np.asarray(green_rates, dtype=float))
    if np.any(rates <= 0):
        raise DomainError("green rates must be positive")
    return [periodic_response(base.with_green_rate(float(g)), controls, max_pulses) for g in rates]


# --------------------------------------------------------------------------
# Recovery time


@dataclass(frozen=True)
class RecoveryFit:
    tau: float
    amplitude: float
    residual: float
    window: tuple


def _recovery_model(t, amplitude, tau):
    return 1.0 - amplitude * np.exp(-t / tau)


def fit_recovery(times, values, window, noise=1e-6):
    """Fit 1 - a exp(-(t - t_start) / tau) to samples inside ``window``."""
    times = np.asarray(times, dtype=float)
    values = np.asarray(values, dtype=float)
    t_start, t_end = window
    mask = (times >= t_start) & (times <= t_end)
    t = times[mask] - t_start
    y = values[mask]
    if len(t) < 3:
        raise FitQualityError("fewer than 3 samples in the recovery window")
    if np.any(np.diff(y) < -noise):
        raise FitQualityError("trace is not recovering monotonically inside the window")
    dip = 1.0 - y
    positive = dip > noise
    if positive.sum() < 2:
        raise FitQualityError("no measurable dip inside the recovery window")
    # Log-linear fit for the starting point; time in ns keeps scales sane.
    t_ns = t * 1e9
    slope, intercept = np.polyfit(t_ns[positive], np.log(dip[positive]), 1)
    tau0 = -1.0 / slope if slope < 0 else t_ns[-1]
    p0 = (math.exp(intercept), tau0)
    try:
        (amp, tau_ns), _ = curve_fit(_recovery_model, t_ns, y, p0=p0, maxfev=5000)
    except RuntimeError as exc:
        raise FitError(f"recovery fit failed: {exc}") from None
    if not tau_ns > 0:
        raise FitQualityError(f"fitted recovery time is not positive ({tau_ns:g} ns)")
    residual = float(np.sum((_recovery_model(t_ns, amp, tau_ns) - y) ** 2))
    return RecoveryFit(tau_ns * 1e-9, float(amp), residual, (t_start, t_end))


def default_recovery_window(trace):
    """From 1 ns after the pulse to 1 ns before the next one."""
    p = trace.params.pulses
    t_pulse = trace.pulse_time
    return t_pulse + 1e-9, t_pulse + p.period - 1e-9


def recovery_time(trace, window=None, noise=1e-6):
    """Exponential recovery time constant of an :class:`EmissionTrace`.

    The default window wraps past the end of the period; samples there are
    taken from the start of the (periodic) trace.
    """
    window = window or default_recovery_window(trace)
    period = trace.params.pulses.period
    times, values = trace.times, trace.values
    if window[1] > times[-1]:
        # Periodic continuation; drop the duplicated t = 0 / t = T point.
        keep = times < period
        times = np.concatenate([times[keep], times[keep] + period])
        values = np.concatenate([values[keep], values[keep]])
    return fit_recovery(times, values, window, noise)


# --------------------------------------------------------------------------
# Fitting

FREE_PARAMETERS = ("eq_rate_hz", "red2_rate_hz", "green_rate_hz", "baseline")


@dataclass(frozen=True, eq=False)
class ObservedTrace:
    """Relative emission samples at times within one period, [0, T)."""

    times: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        t = np.asarray(self.times, dtype=float)
        v = np.asarray(self.values, dtype=float)
        if t.ndim != 1 or t.shape != v.shape or len(t) == 0:
            raise DomainError("observed times and values must be equal-length 1-D arrays")
        if np.any(np.diff(t) <= 0):
            raise DomainError("observed times must be strictly increasing")
        object.__setattr__(self, "times", t)
        object.__setattr__(self, "values", v)


@dataclass(frozen=True, eq=False)
class FitProblem:
    """Box-constrained least-squares problem.

    ``free`` maps names from :data:`FREE_PARAMETERS` to (low, high) bounds.
    ``baseline`` is a multiplicative scale on the simulated relative
    emission; the others replace the matching field of ``fixed``.
    """

    observed: tuple
    free: dict
    fixed: ModelParams
    initial: dict | None = None

    def __post_init__(self):
        if not self.free:
            raise DomainError("at least one free parameter is required")
        if self.fixed.pulses is None:
            raise DomainError("fixed parameters need a pulse train")
        for name, (lo, hi) in self.free.items():
            if name not in FREE_PARAMETERS:
                raise DomainError(f"unknown free parameter {name!r}")
            if not (0 < lo < hi and math.isfinite(hi)):
                raise DomainError(f"bounds for {name} must be finite, positive and ordered")
        for name, value in (self.initial or {}).items():
            lo, hi = self.free[name]
            if not lo <= value <= hi:
                raise DomainError(f"initial value for {name} outside its bounds")
        if not self.observed:
            raise DomainError("at least one observed trace is required")
        period = self.fixed.pulses.period
        for obs in self.observed:
            if obs.times[0] < 0 or obs.times[-1] >= period:
                raise DomainError("observed times must lie in [0, period)")

    @property
    def names(self):
        return tuple(self.free)


@dataclass(frozen=True)
class FitResult:
    values: dict
    residual: float
    nfev: int
    success: bool = True
    message: str = ""


def _params_for(problem, values):
    params = problem.fixed
    if "green_rate_hz" in values:
        params = params.with_green_rate(values["green_rate_hz"])
    changes = {}
    if "eq_rate_hz" in values:
        changes["eq_rate"] = values["eq_rate_hz"]
    if "red2_rate_hz" in values:
        changes["red2_rate"] = values["red2_rate_hz"]
    if changes:
        params = params.with_pulses(**changes)
    return params


def simulate_observed(params, times, controls=None, max_pulses=MAX_PULSES):
    """Periodic-steady-state relative emission at the given period times."""
    times = np.asarray(times, dtype=float)
    traj = simulate_pulse_train(params, max_pulses, controls, stop_when_periodic=True, t_eval=times)
    if not traj.periodic:
        raise ConvergenceError(f"no periodic steady state within {max_pulses} pulses")
    baseline = steady_state_analytic(params.rates, params.pump).p2
    return traj.emission[-len(times):] / baseline


def fit_residuals(problem, values, controls=None):
    """Concatenated (simulated - observed) over all observed traces."""
    params = _params_for(problem, values)
    scale = values.get("baseline", 1.0)
    out = []
    for obs in problem.observed:
        out.append(scale * simulate_observed(params, obs.times, controls) - obs.values)
    return np.concatenate(out)


def fit_parameters(problem, controls=None, max_nfev=200):
    """Least-squares fit of the free parameters within their bounds.

    Works in log-parameter space with a trust-region reflective solver, so
    iterates never leave the box.  Deterministic for identical inputs.
    """
    names = problem.names
    lo = np.log([problem.free[n][0] for n in names])
    hi = np.log([problem.free[n][1] for n in names])
    initial = problem.initial or {}
    x0 = np.array(
        [math.log(initial[n]) if n in initial else 0.5 * (a + b) for n, a, b in zip(names, lo, hi)]
    )
    best = {"cost": math.inf, "x": x0}

    def residuals(x):
        r = fit_residuals(problem, dict(zip(names, np.exp(x))), controls)
        cost = float(r @ r)
        if cost < best["cost"]:
            best.update(cost=cost, x=x.copy())
        return r

    sol = least_squares(
        residuals, x0, bounds=(lo, hi), method="trf", diff_step=1e-5,
        xtol=1e-12, ftol=1e-12, gtol=1e-12, max_nfev=max_nfev,
    )
    values = {n: float(v) for n, v in zip(names, np.exp(sol.x))}
    residual = float(2.0 * sol.cost)
    if sol.status <= 0:
        best_result = FitResult(
            {n: float(v) for n, v in zip(names, np.exp(best["x"]))},
            best["cost"], sol.nfev, False, sol.message,
        )
        raise FitError(f"optimizer did not converge: {sol.message}", best_result)
    return FitResult(values, residual, int(sol.nfev), True, sol.message)


def grid_search(problem, n_points=200, controls=None):
    """Exhaustive search on a log-spaced grid of ``n_points`` per parameter.

    Independent reference for :func:`fit_parameters`; cost grows as
    n_points ** len(free).
    """
    names = problem.names
    axes = [np.geomspace(*problem.free[n], n_points) for n in names]
    best_values, best_cost, count = None, math.inf, 0
    for point in itertools.product(*axes):
        values = dict(zip(names, map(float, point)))
        r = fit_residuals(problem, values, controls)
        cost = float(r @ r)
        count += 1
        if cost < best_cost:
            best_values, best_cost = values, cost
    return FitResult(best_values, best_cost, count)


def synthetic_observation(params, times, noise=0.0, seed=0, controls=None):
    """Simulated relative emission with optional Gaussian noise."""
    values = simulate_observed(params, times, controls)
    if noise > 0:
        values = values + np.random.default_rng(seed).normal(0.0, noise, len(values))
    return ObservedTrace(np.asarray(times, dtype=float), values)
