import math

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from scipy.integrate import quad, solve_ivp

import nvstimex.model as model
from nvstimex.errors import DomainError, IntegrationError
from nvstimex.model import (
    EXCITATION,
    STIMULATED,
    IntegratorControls,
    ModelParams,
    PopulationState,
    PulseTrain,
    PumpDrive,
    RateConstants,
    derivatives,
    emission_signal,
    integrate,
    last_period,
    min_relative_emission,
    photon_energy,
    pulse_rate_at,
    rate_from_intensity,
    relative_emission,
    relax_to_steady,
    simulate_pulse_train,
    steady_state_analytic,
)

RATES = RateConstants()


def rate_matrix(rates, g, r, r2=0.0):
    """Full 3x3 rate matrix written out term by term from the model equations."""
    gg = g + r2
    return np.array(
        [
            [-gg, rates.l21, rates.l31],
            [gg, -(rates.l21 + rates.l23 + r), r],
            [0.0, rates.l23 + r, -(rates.l31 + r)],
        ]
    )


def brute_force(params, state0, t_span, t_eval):
    """Oracle: Radau on the full three-state system with tiny steps."""

    def rhs(t, y):
        r = pulse_rate_at(params.pulses, t, STIMULATED) if params.pulses else 0.0
        r2 = pulse_rate_at(params.pulses, t, EXCITATION) if params.pulses else 0.0
        return rate_matrix(params.rates, params.pump.green_rate, r, r2) @ y

    sol = solve_ivp(rhs, t_span, state0, method="Radau", t_eval=t_eval,
                    rtol=1e-11, atol=1e-15, max_step=0.2e-12)
    return sol.y.T


# --- photon_energy / rate_from_intensity ---------------------------------


@pytest.mark.parametrize(
    "wavelength, expected, tol",
    [(660.0, 1.88, 0.01), (1239.84, 1.0000, 1e-4), (637.0, 1.946, 0.005)],
)
def test_photon_energy(wavelength, expected, tol):
    assert photon_energy(wavelength) == pytest.approx(expected, abs=tol)


@pytest.mark.parametrize("bad", [0.0, -500.0])
def test_photon_energy_rejects_non_positive(bad):
    with pytest.raises(DomainError):
        photon_energy(bad)


def test_rate_from_intensity_pulse_excitation():
    # 1.73 mW average at 10 MHz in 6 ps square-equivalent pulses.
    peak = 1.73e-3 / (10e6 * 6e-12)
    assert peak == pytest.approx(28.83, rel=1e-3)
    rate = rate_from_intensity(3e-24, 28.83, (0.6e-6) ** 2, 700.0)
    assert rate == pytest.approx(0.85e9, rel=0.05)


def test_rate_from_intensity_green_pump():
    rate = rate_from_intensity(0.95e-20, 0.25e-3, (0.6e-6) ** 2, 532.0)
    assert rate == pytest.approx(17.7e6, rel=0.02)


def test_rate_from_intensity_zero_power():
    assert rate_from_intensity(1e-20, 0.0, 1e-12, 700.0) == 0.0


@pytest.mark.parametrize("args", [(0.0, 1.0, 1e-12, 700.0), (1e-20, 1.0, 0.0, 700.0),
                                  (1e-20, 1.0, 1e-12, -1.0), (1e-20, -1.0, 1e-12, 700.0)])
def test_rate_from_intensity_domain(args):
    with pytest.raises(DomainError):
        rate_from_intensity(*args)


# --- pulse train ------------------------------------------------------------


def test_disabled_channel_is_zero():
    p = PulseTrain(eq_rate=0.0, period=25e-9)
    t = np.linspace(0, 50e-9, 101)
    assert np.all(pulse_rate_at(p, t) == 0)
    assert pulse_rate_at(p, p.t0, EXCITATION) == 0


def test_pulse_area_matches_square_equivalent():
    p = PulseTrain(eq_rate=13e9, period=100e-9)
    area, _ = quad(lambda t: pulse_rate_at(p, t), p.t0 - 50e-9, p.t0 + 50e-9,
                   points=[p.t0], limit=200, epsabs=0, epsrel=1e-12)
    assert area == pytest.approx(13e9 * 6e-12, rel=1e-6)
    assert area == pytest.approx(0.078, rel=1e-6)


def test_pulse_peak():
    p = PulseTrain(eq_rate=13e9, period=100e-9, sigma_t=6e-12)
    assert pulse_rate_at(p, p.t0) == pytest.approx(5.186e9, rel=1e-3)
    # Every period repeats the same pulse.
    assert pulse_rate_at(p, p.t0 + 7 * p.period) == pytest.approx(pulse_rate_at(p, p.t0), rel=1e-12)


def test_excitation_channel_has_its_own_area():
    p = PulseTrain(eq_rate=13e9, period=100e-9, red2_rate=0.85e9)
    area, _ = quad(lambda t: pulse_rate_at(p, t, EXCITATION), p.t0 - 1e-10, p.t0 + 1e-10,
                   points=[p.t0], epsabs=0, epsrel=1e-12)
    assert area == pytest.approx(0.85e9 * 6e-12, rel=1e-6)


@pytest.mark.parametrize(
    "kwargs",
    [dict(eq_rate=-1.0, period=1e-8), dict(eq_rate=1.0, period=0.0),
     dict(eq_rate=1.0, period=1e-8, sigma_t=1e-9), dict(eq_rate=1.0, period=1e-8, red2_rate=-1.0)],
)
def test_pulse_train_validation(kwargs):
    with pytest.raises(DomainError):
        PulseTrain(**kwargs)


def test_rate_constants_require_fast_phonon_decay():
    with pytest.raises(DomainError):
        RateConstants(l21=65.3e6, l23=18e6, l31=10e6)
    with pytest.raises(DomainError):
        RateConstants(l21=-1.0)


def test_population_state_validation():
    PopulationState(0.2, 0.3, 0.5)
    with pytest.raises(DomainError):
        PopulationState(0.5, 0.5, 0.5)
    with pytest.raises(DomainError):
        PopulationState(1.1, -0.1, 0.0)


# --- derivatives ------------------------------------------------------------


def test_ground_state_stationary_without_drive():
    params = ModelParams(RATES, PumpDrive(0.0))
    assert np.all(derivatives(PopulationState.ground(), 0.0, params) == 0)


def test_hand_evaluated_derivative():
    params = ModelParams(RATES, PumpDrive(92e6), PulseTrain(13e9, 100e-9))
    d = derivatives(PopulationState(0.5, 0.5, 0.0), 50e-9, params)
    assert d[1] == pytest.approx(4.35e6, rel=1e-6)


@settings(max_examples=200, deadline=None)
@given(
    p=st.lists(st.floats(0, 1), min_size=3, max_size=3).filter(lambda v: sum(v) > 0),
    g=st.floats(0, 1e9),
    eq=st.floats(0, 5e10),
    r2=st.floats(0, 5e9),
    t=st.floats(0, 2e-9),
)
def test_derivatives_conserve_and_match_matrix(p, g, eq, r2, t):
    p = np.array(p) / sum(p)
    params = ModelParams(RATES, PumpDrive(g), PulseTrain(eq, 25e-9, red2_rate=r2))
    d = derivatives(p, t, params)
    assert abs(d.sum()) <= 1e-15 * params.max_rate * 4
    r = pulse_rate_at(params.pulses, t)
    x = pulse_rate_at(params.pulses, t, EXCITATION)
    expected = rate_matrix(RATES, g, r, x) @ p
    assert np.allclose(d, expected, rtol=1e-12, atol=1e-12 * params.max_rate)


# --- steady states ------------------------------------------------------------


def test_steady_state_no_pump():
    assert steady_state_analytic(RATES, PumpDrive(0.0)) == PopulationState.ground()


def test_steady_state_reference_value():
    ss = steady_state_analytic(RATES, PumpDrive(92e6))
    assert ss.p2 == pytest.approx(0.5248, abs=1e-3)


@pytest.mark.parametrize("g", [8.8e6, 92e6, 141e6, 3e9])
def test_steady_state_against_null_space(g):
    # Oracle: null vector of the rate matrix from an SVD.
    vec = np.linalg.svd(rate_matrix(RATES, g, 0.0))[2][-1]
    vec = vec / vec.sum()
    ss = steady_state_analytic(RATES, PumpDrive(g))
    assert np.allclose(ss.as_array(), vec, rtol=1e-10, atol=1e-15)
    params = ModelParams(RATES, PumpDrive(g))
    assert np.max(np.abs(derivatives(ss, 0.0, params))) < 1e-12 * params.max_rate


def test_relax_no_pump_is_immediate():
    assert relax_to_steady(ModelParams(RATES, PumpDrive(0.0))) == PopulationState.ground()


@pytest.mark.parametrize("g", [8.8e6, 92e6, 141e6])
def test_relax_matches_analytic(g):
    params = ModelParams(RATES, PumpDrive(g))
    relaxed = relax_to_steady(params).as_array()
    analytic = steady_state_analytic(RATES, params.pump).as_array()
    assert np.max(np.abs(relaxed - analytic)) < 1e-6


def test_relax_tolerance_scaling():
    params = ModelParams(RATES, PumpDrive(92e6))
    tol = 1e-7
    relaxed = relax_to_steady(params, tol=tol).as_array()
    analytic = steady_state_analytic(RATES, params.pump).as_array()
    assert np.max(np.abs(relaxed - analytic)) < 10 * tol


def test_relax_rejects_pulses(pump_power_high):
    with pytest.raises(DomainError):
        relax_to_steady(pump_power_high)


# --- integration ------------------------------------------------------------


def test_integrate_without_drive_is_constant():
    params = ModelParams(RATES, PumpDrive(0.0))
    traj = integrate(PopulationState.ground(), params, (0.0, 50e-9))
    assert np.all(traj.populations == np.array([1.0, 0.0, 0.0]))


def test_integrate_relaxes_to_analytic_and_monotone():
    params = ModelParams(RATES, PumpDrive(92e6))
    traj = integrate(PopulationState.ground(), params, (0.0, 1e-6))
    analytic = steady_state_analytic(RATES, params.pump).as_array()
    assert np.max(np.abs(traj.populations[-1] - analytic)) < 1e-6
    assert np.all(np.diff(traj.populations[:, 1]) >= -1e-12)
    assert traj.populations[0, 1] == 0.0


def test_integrate_output_grid():
    params = ModelParams(RATES, PumpDrive(92e6), PulseTrain(13e9, 25e-9))
    traj = integrate(steady_state_analytic(RATES, params.pump), params, (0.0, 30e-9))
    grid = traj.times[traj.on_grid]
    assert np.allclose(np.diff(grid), 1e-10, rtol=1e-6)
    dense = traj.times[~traj.on_grid]
    # Dense points cover both pulse windows (at 1 ns and 26 ns).
    assert np.any(np.abs(dense - 1e-9) < 36e-12)
    assert np.any(np.abs(dense - 26e-9) < 36e-12)
    assert np.max(np.diff(traj.times)) <= 1e-10 * (1 + 1e-9)


def test_integrate_against_brute_force(pump_power_high):
    params = pump_power_high.with_pulses(period=25e-9)
    state0 = steady_state_analytic(RATES, params.pump)
    t_eval = np.concatenate([np.linspace(0.95e-9, 1.05e-9, 41), np.linspace(1.1e-9, 6e-9, 50)])
    traj = integrate(state0, params, (0.0, 6e-9), t_eval=t_eval)
    oracle = brute_force(params, state0.as_array(), (0.0, 6e-9), t_eval)
    assert np.max(np.abs(traj.populations - oracle)) < 1e-7


def test_integrate_window_straddles_span_start(pump_power_high):
    # Start mid-pulse; the partial window must still agree with the oracle.
    state0 = steady_state_analytic(RATES, pump_power_high.pump)
    t_eval = np.linspace(1.0e-9, 3e-9, 30)
    traj = integrate(state0, pump_power_high, (0.99e-9, 3e-9), t_eval=t_eval)
    oracle = brute_force(pump_power_high, state0.as_array(), (0.99e-9, 3e-9), t_eval)
    assert np.max(np.abs(traj.populations - oracle)) < 1e-7


def test_integrate_rejects_bad_span():
    params = ModelParams(RATES, PumpDrive(1e6))
    with pytest.raises(DomainError):
        integrate(PopulationState.ground(), params, (1.0, 0.0))


def test_integration_failure_carries_time(monkeypatch, pump_power_high):
    class Failed:
        status = -1
        message = "step size too small"
        t = np.array([0.97e-9])

    monkeypatch.setattr(model, "solve_ivp", lambda *a, **k: Failed())
    with pytest.raises(IntegrationError) as info:
        integrate(steady_state_analytic(RATES, pump_power_high.pump), pump_power_high, (0.0, 2e-9))
    assert info.value.time == pytest.approx(0.97e-9)


def test_large_negative_population_is_an_error():
    with pytest.raises(IntegrationError):
        model._clean(np.array([[0.5, -1e-6, 1.0]]), 0.0)
    cleaned = model._clean(np.array([[0.5, -1e-14, 1.0]]), 0.0)
    assert cleaned[0, 1] == 0.0


# --- pulse trains ------------------------------------------------------------


def test_pulse_train_without_rates_stays_at_cw():
    params = ModelParams(RATES, PumpDrive(92e6), PulseTrain(0.0, 25e-9))
    traj = simulate_pulse_train(params, 3)
    ss = steady_state_analytic(RATES, params.pump).as_array()
    assert np.allclose(traj.populations, ss, rtol=0, atol=1e-12)
    assert traj.periodic


def test_pump_power_high_power_dip(pump_power_high):
    traj = simulate_pulse_train(pump_power_high, 20, stop_when_periodic=True)
    assert traj.periodic
    base = steady_state_analytic(RATES, pump_power_high.pump).p2
    rel = relative_emission(last_period(traj, 100e-9), base)
    assert rel.min() == pytest.approx(0.93, abs=0.02)
    # Recovered before the next pulse.
    assert rel[-1] == pytest.approx(1.0, abs=1e-3)


def test_small_depletion_closed_form():
    params = ModelParams(RATES, PumpDrive(92e6), PulseTrain(13e9, 100e-9))
    traj = simulate_pulse_train(params, 5, stop_when_periodic=True)
    base = steady_state_analytic(RATES, params.pump).p2
    m = relative_emission(traj, base).min()
    assert m == pytest.approx(math.exp(-0.078), rel=0.02)


def test_periodic_detection_and_boundaries(pump_power_high):
    traj = simulate_pulse_train(pump_power_high, 2)
    assert traj.boundary_states.shape == (3, 3)
    assert np.allclose(traj.boundary_states.sum(axis=1), 1.0, atol=1e-14)
    short = pump_power_high.with_pulses(period=25e-9).with_green_rate(8.8e6)
    assert not simulate_pulse_train(short, 1).periodic
    assert simulate_pulse_train(short, 40, stop_when_periodic=True).periodic


def test_pulse_train_input_validation(pump_power_high):
    with pytest.raises(DomainError):
        simulate_pulse_train(pump_power_high, 0)
    with pytest.raises(DomainError):
        simulate_pulse_train(pump_power_high.without_pulses(), 3)
    with pytest.raises(DomainError):
        simulate_pulse_train(pump_power_high, 2, t_eval=[0.0, 100e-9])


def test_t_eval_matches_default_grid(pump_power_high):
    full = simulate_pulse_train(pump_power_high, 3)
    times = np.arange(0, 1000) * 1e-10
    picked = simulate_pulse_train(pump_power_high, 3, t_eval=times)
    last = last_period(full, 100e-9)
    grid_t = last.times[last.on_grid][:-1]
    assert np.allclose(grid_t, times, atol=1e-18)
    assert np.allclose(last.emission[last.on_grid][:-1], picked.emission[-1000:], rtol=0, atol=1e-15)


# --- invariants ------------------------------------------------------------


def test_conservation_and_positivity(pump_power_high):
    for g in (8.8e6, 141e6):
        traj = simulate_pulse_train(pump_power_high.with_green_rate(g), 4)
        assert np.max(np.abs(traj.populations.sum(axis=1) - 1)) < 1e-9
        assert traj.populations.min() >= 0.0


def _min_rel(params, controls=None):
    traj = simulate_pulse_train(params, 30, controls, stop_when_periodic=True)
    return relative_emission(traj, steady_state_analytic(params.rates, params.pump).p2).min()


def test_self_convergence(pump_power_high):
    c = IntegratorControls()
    assert abs(_min_rel(pump_power_high, c) - _min_rel(pump_power_high, c.tightened(10))) < 1e-4


@pytest.mark.parametrize("red", [1e9, 6e9, 13e9, 16e9])
def test_small_depletion_law(red):
    params = ModelParams(RATES, PumpDrive(92e6), PulseTrain(red, 25e-9))
    m = _min_rel(params)
    law = math.exp(-red * 6e-12)
    assert abs(m - law) / (1 - m) < 0.05


def test_dip_monotone_in_stimulated_rate():
    base = ModelParams(RATES, PumpDrive(92e6), PulseTrain(1e9, 100e-9))
    minima = [_min_rel(base.with_pulses(eq_rate=r)) for r in (1e9, 3e9, 6e9, 13e9)]
    assert all(b <= a for a, b in zip(minima, minima[1:]))


def test_dip_depth_grows_with_pump(pump_power_high):
    depth = [1 - _min_rel(pump_power_high.with_green_rate(g)) for g in (8.8e6, 30e6, 70e6, 141e6)]
    assert all(b >= a for a, b in zip(depth, depth[1:]))


def test_phonon_rate_insensitivity(pump_power_high):
    slow = ModelParams(RateConstants(l31=0.5e12), pump_power_high.pump, pump_power_high.pulses)
    assert abs(_min_rel(pump_power_high) - _min_rel(slow)) < 1e-3


# --- emission ------------------------------------------------------------


def test_emission_constant_for_constant_state():
    params = ModelParams(RATES, PumpDrive(92e6))
    ss = steady_state_analytic(RATES, params.pump)
    traj = integrate(ss, params, (0.0, 10e-9))
    sig = emission_signal(traj)
    assert np.allclose(sig, 0.5248, atol=1e-4)
    assert np.ptp(sig) < 1e-12
    assert np.allclose(relative_emission(traj, ss.p2), 1.0, atol=1e-13)


def test_emission_non_negative(pump_power_high):
    assert np.all(emission_signal(simulate_pulse_train(pump_power_high, 2)) >= 0)


def test_relative_emission_rejects_bad_baseline(pump_power_high):
    traj = simulate_pulse_train(pump_power_high, 1)
    with pytest.raises(DomainError):
        relative_emission(traj, 0.0)


def test_low_pump_dip(pump_power_high):
    params = pump_power_high.with_green_rate(8.8e6)
    traj = simulate_pulse_train(params, 20, stop_when_periodic=True)
    rel = relative_emission(traj, steady_state_analytic(RATES, params.pump).p2)
    assert rel.min() == pytest.approx(0.97, abs=0.015)


def test_min_relative_emission_examples():
    assert min_relative_emission(np.ones(50)) == 1.0
    trace = np.array([1.0, 1.0, 0.925, 0.95, 0.97, 0.99, 1.0])
    assert min_relative_emission(trace, n_avg=1) == 0.925
    assert min_relative_emission(trace, n_avg=3) == pytest.approx((0.925 + 0.95 + 0.97) / 3)
    with pytest.raises(DomainError):
        min_relative_emission(np.ones(5), n_avg=10)


def test_extracted_minimum_on_grid(pump_power_high):
    # Averaging ten 0.1 ns samples after the dip reads the exponential
    # recovery: the bias against the dense minimum is the mean of
    # exp(-k dt / tau) over the ten samples (tau from the eigenvalues).
    traj = simulate_pulse_train(pump_power_high, 20, stop_when_periodic=True)
    one = last_period(traj, 100e-9)
    rel = relative_emission(one, steady_state_analytic(RATES, pump_power_high.pump).p2)
    extracted = min_relative_emission(rel[one.on_grid], 10)
    true_min = rel.min()
    slow = -np.sort(np.linalg.eigvals(rate_matrix(RATES, 141e6, 0.0)).real)[1]
    first = one.times[one.on_grid][np.argmin(rel[one.on_grid])] - one.times[np.argmin(rel)]
    k = np.arange(10)
    expected = 1 - (1 - true_min) * np.mean(np.exp(-slow * (first + k * 1e-10)))
    assert extracted == pytest.approx(expected, abs=2e-4)
    assert true_min < extracted < true_min + 0.01
