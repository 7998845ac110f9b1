"""Command-line front end.

    nvstimex <subcommand> --config <path> [--out-dir <path>] [--quiet]

Exit status: 0 on success, 1 on invalid input, 2 on numerical failure.
"""

from __future__ import annotations

import argparse
import logging
import sys
from pathlib import Path

import numpy as np

from . import experiments as ex
from .config import KINDS, load_config
from .errors import DomainError, NumericalError
from .files import fmt, params_record, read_trace_csv, write_sweep_csv, write_table_csv, write_trace_csv
from .model import (
    min_relative_emission,
    photon_energy,
    relative_emission,
    relax_to_steady,
    simulate_pulse_train,
    steady_state_analytic,
)
from .spectra import classify_regime, read_spectrum, smooth_running_average, synthetic_nv_spectrum

log = logging.getLogger("nvstimex")

EXIT_OK = 0
EXIT_INVALID = 1
EXIT_NUMERICAL = 2


def _steady_state(cfg, out):
    params = cfg.model_params()
    analytic = steady_state_analytic(params.rates, params.pump)
    relaxed = relax_to_steady(params, tol=cfg.experiment["relax_tol"])
    rows = [
        ("analytic", analytic.p1, analytic.p2, analytic.p3),
        ("relaxed", relaxed.p1, relaxed.p2, relaxed.p3),
    ]
    write_table_csv(out / "steady_state.csv", ("method", "p1", "p2", "p3"), rows,
                    {"params": params_record(params)})
    return f"steady-state P2={fmt(analytic.p2)} (relaxed {fmt(relaxed.p2)})"


def _simulate(cfg, out):
    params = cfg.model_params()
    traj = simulate_pulse_train(params, cfg.experiment["n_pulses"], cfg.controls())
    baseline = steady_state_analytic(params.rates, params.pump).p2
    rel = relative_emission(traj, baseline)
    write_trace_csv(out / "trace.csv", traj.times, rel, {"params": params_record(params)})
    extracted = min_relative_emission(rel[traj.on_grid], cfg.experiment["n_avg"])
    return (
        f"simulate min_relative_emission={fmt(rel.min())} extracted={fmt(extracted)} "
        f"periodic={traj.periodic}"
    )


def _spectrum(cfg):
    e = cfg.experiment
    if "spectrum_csv" in e:
        spectrum = read_spectrum(e["spectrum_csv"])
    else:
        spectrum = synthetic_nv_spectrum(e["spectrum_resolution_nm"])
    if "smoothing_window_nm" in e:
        spectrum = smooth_running_average(spectrum, e["smoothing_window_nm"])
    return spectrum


def _sweep_wavelength(cfg, out):
    e = cfg.experiment
    result = ex.wavelength_sweep(
        _spectrum(cfg), cfg.model_params(), e["centres_nm"], e["bandwidth_nm"],
        e["anchor_rate_hz"], e["anchor_wavelength_nm"],
        powers=e.get("measured_powers_w"), reference_power=e.get("reference_power_w"),
        controls=cfg.controls(), n_avg=e["n_avg"], max_pulses=cfg.sim["max_pulses"],
    )
    meta = {"spectrum": e.get("spectrum_csv", "synthetic")}
    write_sweep_csv(out / "sweep_wavelength.csv", result, meta)
    i = int(np.argmin(result.metric))
    return f"sweep-wavelength argmin={fmt(result.axis[i])} nm min_relative_emission={fmt(result.metric[i])}"


def _trace_name(green_rate):
    return f"trace_green_{fmt(green_rate)}_hz.csv"


def _sweep_power(cfg, out):
    e = cfg.experiment
    traces = ex.power_sweep(cfg.model_params(), e["green_rates_hz"], cfg.controls(), cfg.sim["max_pulses"])
    rates = np.array([t.params.pump.green_rate for t in traces])
    minima, taus = [], []
    for trace in traces:
        write_trace_csv(out / _trace_name(trace.params.pump.green_rate), trace.times, trace.values,
                        {"params": params_record(trace.params)})
        minima.append(trace.extracted_minimum(e["n_avg"]))
        taus.append(ex.recovery_time(trace).tau)
    params = tuple(t.params for t in traces)
    write_sweep_csv(out / "sweep_power_min.csv",
                    ex.SweepResult("green_rate_hz", rates, "min_relative_emission", np.array(minima), params))
    write_sweep_csv(out / "sweep_power_recovery.csv",
                    ex.SweepResult("green_rate_hz", rates, "recovery_time_s", np.array(taus), params))
    parts = [f"{fmt(g)}:{fmt(m)}/{fmt(t)}" for g, m, t in zip(rates, minima, taus)]
    return "sweep-power green_rate_hz:min_relative_emission/recovery_time_s " + " ".join(parts)


def _recovery(cfg, out):
    e = cfg.experiment
    trace = ex.periodic_response(cfg.model_params(), cfg.controls(), cfg.sim["max_pulses"])
    window = None
    if "window_start_s" in e or "window_end_s" in e:
        default = ex.default_recovery_window(trace)
        window = (e.get("window_start_s", default[0]), e.get("window_end_s", default[1]))
    fit = ex.recovery_time(trace, window)
    meta = {"params": params_record(trace.params)}
    write_trace_csv(out / "trace.csv", trace.times, trace.values, meta)
    write_table_csv(out / "recovery.csv", ("tau_s", "amplitude", "residual", "window_start_s", "window_end_s"),
                    [(fit.tau, fit.amplitude, fit.residual, *map(float, fit.window))], meta)
    return f"recovery tau={fmt(fit.tau)} s"


def _fit(cfg, out):
    e = cfg.experiment
    observed = tuple(ex.ObservedTrace(*read_trace_csv(p)) for p in e["observed_csv"])
    problem = ex.FitProblem(observed, e["free"], cfg.model_params(), e.get("initial"))
    controls = cfg.controls()
    result = ex.fit_parameters(problem, controls)
    rows = [(k, v) for k, v in result.values.items()] + [("residual", result.residual)]
    meta = {"params": params_record(problem.fixed), "free": e["free"]}
    write_table_csv(out / "fit.csv", ("parameter", "value"), rows, meta)
    summary = "fit " + " ".join(f"{k}={fmt(v)}" for k, v in result.values.items())
    summary += f" residual={fmt(result.residual)}"
    if e["grid_points"]:
        grid = ex.grid_search(problem, e["grid_points"], controls)
        rows = [(k, v) for k, v in grid.values.items()] + [("residual", grid.residual)]
        write_table_csv(out / "fit_grid.csv", ("parameter", "value"), rows, meta)
        summary += f" grid_residual={fmt(grid.residual)}"
    return summary


def _classify(cfg, out):
    rows = []
    for wl in cfg.experiment["wavelengths_nm"]:
        rows.append((wl, classify_regime(wl).value, photon_energy(wl)))
    write_table_csv(out / "classify.csv", ("wavelength_nm", "regime", "photon_energy_ev"), rows)
    return "classify " + " ".join(f"{fmt(wl)}:{label}" for wl, label, _ in rows)


COMMANDS = {
    "steady-state": _steady_state,
    "simulate": _simulate,
    "sweep-wavelength": _sweep_wavelength,
    "sweep-power": _sweep_power,
    "recovery": _recovery,
    "fit": _fit,
    "classify": _classify,
}


def run(config, subcommand, out_dir=None, quiet=False, stdout=None):
    """Execute ``subcommand`` for a parsed config; return the exit status."""
    stdout = stdout or sys.stdout
    if config.kind != subcommand:
        log.error("config experiment.kind is '%s' but subcommand is '%s'", config.kind, subcommand)
        return EXIT_INVALID
    out = Path(out_dir if out_dir is not None else config.experiment["out_dir"])
    try:
        summary = COMMANDS[subcommand](config, out)
    except NumericalError as exc:
        log.error("numerical failure: %s", exc)
        return EXIT_NUMERICAL
    except (DomainError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    if not quiet:
        print(summary, file=stdout)
    return EXIT_OK


class _Parser(argparse.ArgumentParser):
    # Usage errors are input errors, not numerical ones.
    def error(self, message):
        self.print_usage(sys.stderr)
        self.exit(EXIT_INVALID, f"{self.prog}: error: {message}\n")


def build_parser():
    parser = _Parser(prog="nvstimex", description=__doc__.splitlines()[0])
    parser.add_argument("subcommand", choices=KINDS)
    parser.add_argument("--config", required=True, help="TOML run configuration")
    parser.add_argument("--out-dir", help="output directory (overrides experiment.out_dir)")
    parser.add_argument("--quiet", action="store_true", help="suppress the summary line and warnings")
    return parser


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(
        level=logging.ERROR if args.quiet else logging.WARNING,
        format="nvstimex: %(levelname)s: %(message)s",
        stream=sys.stderr,
    )
    try:
        config = load_config(args.config)
    except (DomainError, OSError) as exc:
        log.error("%s", exc)
        return EXIT_INVALID
    return run(config, args.subcommand, args.out_dir, args.quiet)


if __name__ == "__main__":
    sys.exit(main())
