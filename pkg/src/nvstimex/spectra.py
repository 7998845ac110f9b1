"""Emission spectra, stimulated-emission rate curves and regime labels."""

from __future__ import annotations

import csv
import enum
import io
from dataclasses import dataclass

import numpy as np

from .errors import DomainError


class SpectrumKind(str, enum.Enum):
    EMISSION = "emission-intensity"
    RATE = "rate-curve"


class Regime(str, enum.Enum):
    STIMULATED_EMISSION = "StimulatedEmissionDominant"
    IONISATION = "IonisationDominant"
    TRANSITION = "Transition"


# Pulsed wavelengths above this favour stimulated emission, below the
# lower bound photoionisation of NV- dominates.
STIMULATED_ABOVE_NM = 680.0
IONISATION_BELOW_NM = 640.0


class SpectrumFormatError(DomainError):
    def __init__(self, message, line=None):
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)
        self.line = line


@dataclass(frozen=True, eq=False)
class SpectrumCurve:
    wavelengths: np.ndarray
    values: np.ndarray
    kind: SpectrumKind = SpectrumKind.EMISSION

    def __post_init__(self):
        wl = np.array(self.wavelengths, dtype=float)
        val = np.array(self.values, dtype=float)
        if wl.ndim != 1 or wl.shape != val.shape:
            raise DomainError("wavelengths and values must be 1-D arrays of equal length")
        if len(wl) < 2:
            raise DomainError("a spectrum needs at least two points")
        if np.any(np.diff(wl) <= 0):
            raise DomainError("wavelengths must be strictly increasing")
        if np.any(val < 0) or not np.all(np.isfinite(val)):
            raise DomainError("spectrum values must be finite and non-negative")
        wl.flags.writeable = False
        val.flags.writeable = False
        object.__setattr__(self, "wavelengths", wl)
        object.__setattr__(self, "values", val)
        object.__setattr__(self, "kind", SpectrumKind(self.kind))

    def __eq__(self, other):
        if not isinstance(other, SpectrumCurve):
            return NotImplemented
        return (
            self.kind == other.kind
            and np.array_equal(self.wavelengths, other.wavelengths)
            and np.array_equal(self.values, other.values)
        )

    @property
    def range(self):
        return float(self.wavelengths[0]), float(self.wavelengths[-1])

    def __call__(self, wavelength):
        """Linear interpolation; no extrapolation outside the tabulated range."""
        wavelength = np.asarray(wavelength, dtype=float)
        lo, hi = self.range
        if np.any((wavelength < lo) | (wavelength > hi)):
            raise DomainError(f"wavelength outside spectrum range [{lo:g}, {hi:g}] nm")
        out = np.interp(wavelength, self.wavelengths, self.values)
        return float(out) if out.ndim == 0 else out


def load_spectrum(source):
    """Parse a ``wavelength_nm,intensity`` table.

    ``source`` is a text stream or a string holding the table.  Blank lines
    and lines starting with ``#`` are ignored; a leading header row is
    optional.  Rows are sorted by wavelength.
    """
    if isinstance(source, str):
        source = io.StringIO(source)
    rows = []
    seen_data = False
    for lineno, line in enumerate(source, start=1):
        text = line.strip()
        if not text or text.startswith("#"):
            continue
        fields = next(csv.reader([text]))
        if not seen_data and fields and fields[0].strip().lower() == "wavelength_nm":
            seen_data = True
            continue
        seen_data = True
        if len(fields) != 2:
            raise SpectrumFormatError(f"expected 2 columns, got {len(fields)}", lineno)
        try:
            wl, val = float(fields[0]), float(fields[1])
        except ValueError:
            raise SpectrumFormatError(f"non-numeric value in {text!r}", lineno) from None
        if not (np.isfinite(wl) and np.isfinite(val)):
            raise SpectrumFormatError("non-finite value", lineno)
        if val < 0:
            raise SpectrumFormatError(f"negative intensity {val:g}", lineno)
        rows.append((wl, val, lineno))
    if len(rows) < 2:
        raise SpectrumFormatError("need at least two data rows")
    rows.sort(key=lambda r: r[0])
    for a, b in zip(rows, rows[1:]):
        if a[0] == b[0]:
            raise SpectrumFormatError(f"duplicate wavelength {a[0]:g} nm", b[2])
    return SpectrumCurve(
        np.array([r[0] for r in rows]), np.array([r[1] for r in rows]), SpectrumKind.EMISSION
    )


def read_spectrum(path):
    with open(path, encoding="utf-8", newline="") as fh:
        return load_spectrum(fh)


def smooth_running_average(curve, window):
    """Running mean over all points within +-window/2 of each wavelength.

    Near the ends the window is truncated to the available points.
    """
    if not window > 0:
        raise DomainError("window must be positive")
    wl = curve.wavelengths
    half = 0.5 * window * (1 + 1e-12)
    lo = np.searchsorted(wl, wl - half, side="left")
    hi = np.searchsorted(wl, wl + half, side="right")
    csum = np.concatenate([[0.0], np.cumsum(curve.values)])
    count = hi - lo
    smoothed = np.where(count == 1, curve.values, (csum[hi] - csum[lo]) / count)
    # The cumulative-sum difference can lose the last few bits; keep bounds.
    smoothed = np.clip(smoothed, curve.values.min(), curve.values.max())
    return SpectrumCurve(wl, smoothed, curve.kind)


# Synthetic NV- emission model.  The zero-phonon line sits at 637 nm; the
# phonon sideband is an asymmetric Gaussian peaking at 682 nm with a steep
# blue edge and a long red tail towards 800 nm.  Shape parameters are
# illustrative, not measured.
ZPL_NM = 637.0
ZPL_WIDTH_NM = 1.5
ZPL_HEIGHT = 0.3
SIDEBAND_PEAK_NM = 682.0
SIDEBAND_BLUE_WIDTH_NM = 20.0
SIDEBAND_RED_WIDTH_NM = 45.0
SYNTHETIC_RANGE_NM = (550.0, 850.0)


def sideband_component(wavelength):
    wavelength = np.asarray(wavelength, dtype=float)
    width = np.where(wavelength < SIDEBAND_PEAK_NM, SIDEBAND_BLUE_WIDTH_NM, SIDEBAND_RED_WIDTH_NM)
    return np.exp(-0.5 * ((wavelength - SIDEBAND_PEAK_NM) / width) ** 2)


def zpl_component(wavelength):
    wavelength = np.asarray(wavelength, dtype=float)
    return ZPL_HEIGHT * np.exp(-0.5 * ((wavelength - ZPL_NM) / ZPL_WIDTH_NM) ** 2)


def synthetic_nv_spectrum(resolution=0.5):
    """Synthetic NV- emission spectrum on [550, 850] nm.

    A stand-in for a measured spectrum: narrow zero-phonon line plus a broad
    phonon sideband with its maximum at 682 nm.
    """
    if not resolution > 0:
        raise DomainError("resolution must be positive")
    lo, hi = SYNTHETIC_RANGE_NM
    n = int(np.floor((hi - lo) / resolution + 1e-9))
    wl = lo + resolution * np.arange(n + 1)
    return SpectrumCurve(wl, sideband_component(wl) + zpl_component(wl), SpectrumKind.EMISSION)


def rate_curve_from_spectrum(curve, anchor_rate, anchor_wavelength):
    """Scale an emission spectrum into a stimulated-emission rate curve.

    The cross-section follows the emission spectrum, so the rate at any
    wavelength is the spectrum rescaled to equal ``anchor_rate`` (Hz) at
    ``anchor_wavelength`` (nm).
    """
    if curve.kind != SpectrumKind.EMISSION:
        raise DomainError("rate curves are built from emission spectra")
    if not anchor_rate >= 0:
        raise DomainError("anchor_rate must be non-negative")
    lo, hi = curve.range
    if not lo <= anchor_wavelength <= hi:
        raise DomainError(f"anchor {anchor_wavelength:g} nm outside [{lo:g}, {hi:g}] nm")
    if curve.values.max() <= 0:
        raise DomainError("spectrum is identically zero")
    at_anchor = curve(anchor_wavelength)
    if at_anchor <= 0:
        raise DomainError(f"spectrum vanishes at the anchor {anchor_wavelength:g} nm")
    values = curve.values * (anchor_rate / at_anchor)
    exact = np.flatnonzero(curve.wavelengths == anchor_wavelength)
    values[exact] = anchor_rate
    return SpectrumCurve(curve.wavelengths, values, SpectrumKind.RATE)


def band_average(curve, centre, bandwidth):
    """Mean of the interpolated curve over [centre -+ bandwidth/2].

    The band is clipped to the tabulated range.  Exact for the piecewise
    linear interpolant (trapezoidal rule on the tabulated breakpoints).
    """
    if not bandwidth >= 0:
        raise DomainError("bandwidth must be non-negative")
    lo, hi = curve.range
    a = max(centre - 0.5 * bandwidth, lo)
    b = min(centre + 0.5 * bandwidth, hi)
    if a > b:
        raise DomainError(f"band around {centre:g} nm does not overlap [{lo:g}, {hi:g}] nm")
    if a == b:
        return curve(a)
    wl = curve.wavelengths
    inner = wl[(wl > a) & (wl < b)]
    x = np.concatenate([[a], inner, [b]])
    y = np.interp(x, wl, curve.values)
    return float(np.trapezoid(y, x) / (b - a))


def classify_regime(wavelength):
    """Dominant process for a pulsed excitation wavelength (nm)."""
    if not wavelength > 0:
        raise DomainError("wavelength must be positive")
    if wavelength > STIMULATED_ABOVE_NM:
        return Regime.STIMULATED_EMISSION
    if wavelength < IONISATION_BELOW_NM:
        return Regime.IONISATION
    return Regime.TRANSITION
