"""Excitation synthesis and frequency-domain evaluation.

Transmissibility is the H1 estimate H(f) = S_xy / S_xx from Welch-averaged
cross/auto spectra (Hann windows, 50% overlap by default), with coherence
|S_xy|^2 / (S_xx S_yy) as the linearity diagnostic. Band-limited noise is
synthesized in the frequency domain (flat magnitude, random phases from a
seeded generator) so its PSD is flat across the band and identically zero
outside the cosine edge tapers.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np
from scipy import signal

from .dynamics import AXIS_VECTORS, SeatMotion


class AnalysisError(ValueError):
    pass


EXCITATION_KINDS = ("band_noise", "sine_sweep", "single_sine")


@dataclass(frozen=True)
class ExcitationSpec:
    """Seat excitation recipe: deterministic given the seed."""

    kind: str
    axis: str
    f_low: float  # Hz
    f_high: float  # Hz
    rms_target: float  # m/s^2
    duration: float  # s
    seed: int = 0
    edge_width: float = 0.1  # Hz, taper outside the band (band_noise)

    def validate(self, dt: float) -> None:
        if self.kind not in EXCITATION_KINDS:
            raise AnalysisError(f"unknown excitation kind {self.kind!r}")
        if self.axis not in AXIS_VECTORS:
            raise AnalysisError(f"unknown excitation axis {self.axis!r}")
        nyquist = 0.5 / dt
        if not (0.0 < self.f_low <= self.f_high):
            raise AnalysisError("need 0 < f_low <= f_high")
        if self.kind != "single_sine" and not (self.f_low < self.f_high):
            raise AnalysisError("need f_low < f_high")
        if self.f_high > nyquist / 2.0:
            raise AnalysisError(
                f"f_high {self.f_high} Hz exceeds Nyquist/2 = {nyquist / 2.0} Hz at dt={dt}"
            )
        if self.rms_target <= 0.0:
            raise AnalysisError("rms_target must be > 0")
        if self.duration <= 0.0:
            raise AnalysisError("duration must be > 0")


def generate_excitation(spec: ExcitationSpec, dt: float) -> SeatMotion:
    """Synthesize the excitation window as seat motion (no settling prefix)."""
    spec.validate(dt)
    n = int(round(spec.duration / dt)) + 1

    if spec.kind == "single_sine":
        t = np.arange(n) * dt
        accel = np.sqrt(2.0) * spec.rms_target * np.sin(2.0 * np.pi * spec.f_low * t)
        return SeatMotion(spec.axis, dt, accel)

    if spec.kind == "sine_sweep":
        t = np.arange(n) * dt
        raw = signal.chirp(t, f0=spec.f_low, f1=spec.f_high, t1=t[-1], method="logarithmic")
        accel = raw * (spec.rms_target / np.sqrt(np.mean(raw * raw)))
        return SeatMotion(spec.axis, dt, accel)

    # band-limited Gaussian noise via frequency-domain synthesis
    rng = np.random.default_rng(spec.seed)
    freqs = np.fft.rfftfreq(n, dt)
    amp = np.zeros(len(freqs))
    inside = (freqs >= spec.f_low) & (freqs <= spec.f_high)
    amp[inside] = 1.0
    w = spec.edge_width
    if w > 0.0:
        lo = (freqs >= spec.f_low - w) & (freqs < spec.f_low)
        amp[lo] = 0.5 * (1.0 + np.cos(np.pi * (spec.f_low - freqs[lo]) / w))
        hi = (freqs > spec.f_high) & (freqs <= spec.f_high + w)
        amp[hi] = 0.5 * (1.0 + np.cos(np.pi * (freqs[hi] - spec.f_high) / w))
    amp[0] = 0.0
    phases = rng.uniform(0.0, 2.0 * np.pi, size=len(freqs))
    spectrum = amp * np.exp(1j * phases)
    spectrum[-1] = np.abs(spectrum[-1])  # real Nyquist bin
    accel = np.fft.irfft(spectrum, n=n)
    accel *= spec.rms_target / np.sqrt(np.mean(accel * accel))
    return SeatMotion(spec.axis, dt, accel)


@dataclass
class TransmissibilityCurve:
    """Complex frequency response per output channel plus coherence."""

    freqs: np.ndarray  # Hz, strictly increasing
    H: dict  # channel name -> complex ndarray
    coherence: dict  # channel name -> ndarray in [0, 1]
    band: tuple  # (f_low, f_high) Hz

    def __post_init__(self):
        if np.any(np.diff(self.freqs) <= 0.0):
            raise AnalysisError("frequency grid must be strictly increasing")
        for name, h in self.H.items():
            if not np.all(np.isfinite(h)):
                raise AnalysisError(f"non-finite H for channel {name!r}")
        for name, c in self.coherence.items():
            if np.any(c < -1e-12) or np.any(c > 1.0 + 1e-9):
                raise AnalysisError(f"coherence out of [0, 1] for channel {name!r}")

    @property
    def channels(self) -> list:
        return list(self.H)

    def magnitude(self, channel: str) -> np.ndarray:
        return np.abs(self.H[channel])

    def peak(self, channel: str) -> tuple[float, float]:
        """(frequency, magnitude) of the in-band magnitude peak."""
        mag = self.magnitude(channel)
        k = int(np.argmax(mag))
        return float(self.freqs[k]), float(mag[k])

    def to_csv(self, path) -> None:
        cols = ["freq_hz"]
        data = [self.freqs]
        for name in self.channels:
            cols += [f"{name}_mag", f"{name}_phase_deg", f"{name}_coherence"]
            data += [
                np.abs(self.H[name]),
                np.degrees(np.angle(self.H[name])),
                self.coherence[name],
            ]
        arr = np.column_stack(data)
        with open(path, "w") as fh:
            fh.write("# band_hz=%.6g,%.6g\n" % self.band)
            fh.write(",".join(cols) + "\n")
            for row in arr:
                fh.write(",".join("%.9g" % v for v in row) + "\n")

    @classmethod
    def from_csv(cls, path) -> "TransmissibilityCurve":
        band = (0.0, np.inf)
        with open(path) as fh:
            lines = fh.readlines()
        rows = []
        header = None
        for line in lines:
            line = line.strip()
            if not line:
                continue
            if line.startswith("#"):
                if "band_hz=" in line:
                    lo, hi = line.split("band_hz=")[1].split(",")
                    band = (float(lo), float(hi))
                continue
            if header is None:
                header = line.split(",")
                continue
            rows.append([float(v) for v in line.split(",")])
        if header is None or not rows:
            raise AnalysisError(f"no data rows in {path}")
        arr = np.array(rows)
        freqs = arr[:, 0]
        H, coh = {}, {}
        k = 1
        while k < len(header):
            name = header[k].rsplit("_mag", 1)[0]
            mag = arr[:, k]
            phase = np.radians(arr[:, k + 1])
            H[name] = mag * np.exp(1j * phase)
            coh[name] = arr[:, k + 2]
            k += 3
        return cls(freqs=freqs, H=H, coherence=coh, band=band)


def transmissibility(
    input_series: np.ndarray,
    outputs: dict,
    fs: float,
    band: tuple = (0.5, 12.0),
    window_s: float = 10.0,
    overlap: float = 0.5,
) -> TransmissibilityCurve:
    """H1 transmissibility of each output channel against the input.

    All series must share the sampling rate and length, with any settling
    phase already trimmed.
    """
    x = np.asarray(input_series, dtype=float)
    nperseg = int(round(window_s * fs))
    if len(x) < 2 * nperseg:
        raise AnalysisError(
            f"series of {len(x)} samples is shorter than two {window_s} s windows"
        )
    noverlap = int(round(nperseg * overlap))
    kw = dict(fs=fs, window="hann", nperseg=nperseg, noverlap=noverlap, detrend="constant")

    freqs, s_xx = signal.welch(x, **kw)
    sel = (freqs >= band[0]) & (freqs <= band[1])
    H, coh = {}, {}
    for name, y in outputs.items():
        y = np.asarray(y, dtype=float)
        if len(y) != len(x):
            raise AnalysisError(f"channel {name!r} length {len(y)} != input {len(x)}")
        _, s_xy = signal.csd(x, y, **kw)
        _, s_yy = signal.welch(y, **kw)
        h = s_xy / s_xx
        c = np.abs(s_xy) ** 2 / (s_xx * s_yy)
        H[name] = h[sel]
        coh[name] = np.clip(c[sel], 0.0, 1.0)
    return TransmissibilityCurve(freqs=freqs[sel], H=H, coherence=coh, band=band)


@dataclass
class CurveComparison:
    """Per-channel difference metrics between two transmissibility curves."""

    channels: list
    rms_db: dict  # band RMS of log-magnitude difference, dB
    peak_freq_delta: dict  # Hz
    peak_mag_delta_db: dict  # dB
    resampled: bool = False

    def worst_rms_db(self) -> float:
        return max(self.rms_db.values()) if self.rms_db else 0.0


def compare_curves(a: TransmissibilityCurve, b: TransmissibilityCurve) -> CurveComparison:
    """Band-weighted log-magnitude RMS difference and peak deltas.

    Curves on different grids are resampled onto the overlap of their
    grids (flagged in the result); disjoint bands are an error.
    """
    shared = [c for c in a.channels if c in b.H]
    if not shared:
        raise AnalysisError("curves have no channels in common")
    resampled = False
    if len(a.freqs) == len(b.freqs) and np.allclose(a.freqs, b.freqs):
        fa = a.freqs
        mag_a = {c: a.magnitude(c) for c in shared}
        mag_b = {c: b.magnitude(c) for c in shared}
    else:
        lo = max(a.freqs[0], b.freqs[0])
        hi = min(a.freqs[-1], b.freqs[-1])
        if hi <= lo:
            raise AnalysisError(
                f"frequency ranges [{a.freqs[0]}, {a.freqs[-1]}] and "
                f"[{b.freqs[0]}, {b.freqs[-1]}] Hz are disjoint"
            )
        resampled = True
        base = a.freqs[(a.freqs >= lo) & (a.freqs <= hi)]
        fa = base
        mag_a = {c: np.interp(base, a.freqs, a.magnitude(c)) for c in shared}
        mag_b = {c: np.interp(base, b.freqs, b.magnitude(c)) for c in shared}

    rms, pf, pm = {}, {}, {}
    for c in shared:
        la = 20.0 * np.log10(np.maximum(mag_a[c], 1e-15))
        lb = 20.0 * np.log10(np.maximum(mag_b[c], 1e-15))
        rms[c] = float(np.sqrt(np.mean((la - lb) ** 2)))
        ka, kb = int(np.argmax(mag_a[c])), int(np.argmax(mag_b[c]))
        pf[c] = float(abs(fa[ka] - fa[kb]))
        pm[c] = float(abs(la[ka] - lb[kb]))
    return CurveComparison(
        channels=shared, rms_db=rms, peak_freq_delta=pf, peak_mag_delta_db=pm,
        resampled=resampled,
    )


def welch_psd(series: np.ndarray, fs: float, window_s: float = 10.0, overlap: float = 0.5):
    """Welch PSD with the analysis defaults (density scaling)."""
    nperseg = int(round(window_s * fs))
    return signal.welch(
        series, fs=fs, window="hann", nperseg=nperseg,
        noverlap=int(round(nperseg * overlap)), detrend="constant",
    )
