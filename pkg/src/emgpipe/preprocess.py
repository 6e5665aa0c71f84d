"""Mains notch, Butterworth low-pass, analytic envelope and normalization."""
from __future__ import annotations

import hashlib
import json
from dataclasses import dataclass, asdict
from typing import Optional

import numpy as np
from scipy.signal import sosfilt

from .dataset import EmgRecording
from .errors import ArgumentError, DegenerateError, DesignError

STAGE_ORDERS = ("filter_then_envelope", "envelope_then_filter")
NORMALIZATIONS = ("max_abs", "z_score", "none")


@dataclass(frozen=True, eq=False)
class FilterCoefficients:
    """Cascade of biquads; each row of ``sos`` is ``b0 b1 b2 1 a1 a2``."""

    sos: np.ndarray
    kind: str
    order: int
    sample_rate_hz: float
    cutoff_hz: Optional[float] = None
    notch_hz: Optional[float] = None
    q: Optional[float] = None

    @property
    def sections(self) -> list:
        return [dict(b0=s[0], b1=s[1], b2=s[2], a1=s[4], a2=s[5]) for s in self.sos]

    def pole_radii(self) -> np.ndarray:
        radii = []
        for s in self.sos:
            radii.extend(np.abs(np.roots([1.0, s[4], s[5]])))
        return np.asarray(radii)

    def is_stable(self) -> bool:
        return bool(np.all(self.pole_radii() < 1.0))


def frequency_response(coeffs: FilterCoefficients, freqs_hz) -> np.ndarray:
    """Complex single-pass response of the cascade at ``freqs_hz``."""
    w = 2 * np.pi * np.asarray(freqs_hz, dtype=np.float64) / coeffs.sample_rate_hz
    zi = np.exp(-1j * w)
    h = np.ones_like(zi)
    for b0, b1, b2, _, a1, a2 in coeffs.sos:
        h *= (b0 + b1 * zi + b2 * zi ** 2) / (1.0 + a1 * zi + a2 * zi ** 2)
    return h


def design_butterworth_lowpass(order: int, cutoff_hz: float, sample_rate_hz: float) -> FilterCoefficients:
    """Digital Butterworth low-pass by bilinear transform with prewarping.

    Conjugate pole pairs become second-order sections with both zeros at
    z = -1; each section is scaled to unit DC gain.
    """
    if order < 2 or order % 2:
        raise ArgumentError(f"order must be an even integer >= 2, got {order}")
    nyq = sample_rate_hz / 2.0
    if not 0 < cutoff_hz < nyq:
        raise DesignError(f"cutoff {cutoff_hz} Hz must lie in (0, {nyq}) Hz")
    fs2 = 2.0 * sample_rate_hz
    wc = fs2 * np.tan(np.pi * cutoff_hz / sample_rate_hz)
    sos = []
    for k in range(order // 2):
        # upper-half-plane analog prototype pole
        theta = np.pi * (2 * k + 1 + order) / (2 * order)
        s = wc * np.exp(1j * theta)
        z = (1 + s / fs2) / (1 - s / fs2)
        a1 = -2.0 * z.real
        a2 = abs(z) ** 2
        g = (1.0 + a1 + a2) / 4.0
        sos.append([g, 2 * g, g, 1.0, a1, a2])
    return FilterCoefficients(np.array(sos), "butterworth_lowpass", order, float(sample_rate_hz),
                              cutoff_hz=float(cutoff_hz))


def design_notch(notch_hz: float, q: float, sample_rate_hz: float) -> FilterCoefficients:
    """Second-order IIR notch: unit gain at DC and Nyquist, null at ``notch_hz``."""
    nyq = sample_rate_hz / 2.0
    if not 0 < notch_hz < nyq:
        raise DesignError(f"notch {notch_hz} Hz must lie in (0, {nyq}) Hz")
    if not q > 0:
        raise DesignError(f"notch q must be positive, got {q}")
    w0 = 2 * np.pi * notch_hz / sample_rate_hz
    alpha = np.sin(w0) / (2 * q)
    c = -2 * np.cos(w0)
    a0 = 1 + alpha
    sos = np.array([[1 / a0, c / a0, 1 / a0, 1.0, c / a0, (1 - alpha) / a0]])
    return FilterCoefficients(sos, "notch", 2, float(sample_rate_hz), notch_hz=float(notch_hz), q=float(q))


def steady_state(coeffs: FilterCoefficients) -> np.ndarray:
    """Transposed-DF-II state ``(n_sections, 2)`` for a unit step held forever."""
    zi = np.zeros((len(coeffs.sos), 2))
    u = 1.0
    for i, (b0, b1, b2, _, a1, a2) in enumerate(coeffs.sos):
        y = u * (b0 + b1 + b2) / (1 + a1 + a2)
        z2 = b2 * u - a2 * y
        zi[i] = (b1 * u - a1 * y + z2, z2)
        u = y
    return zi


def apply_filter(signal, coeffs: FilterCoefficients, zero_phase: bool = True) -> np.ndarray:
    """Run the biquad cascade along axis 0.

    Causal mode starts from rest. Zero-phase mode pads both ends by odd
    reflection (``3 * order`` samples), runs the cascade forward and then
    backward starting each pass from the steady state of its first sample,
    and trims the padding.
    """
    x = np.asarray(signal, dtype=np.float64)
    if not zero_phase:
        return sosfilt(coeffs.sos, x, axis=0)
    pad = 3 * 2 * len(coeffs.sos)
    if x.shape[0] <= pad:
        raise ArgumentError(f"zero-phase filtering needs more than {pad} samples, got {x.shape[0]}")
    head = 2 * x[0] - x[pad:0:-1]
    tail = 2 * x[-1] - x[-2:-pad - 2:-1]
    ext = np.concatenate([head, x, tail], axis=0)
    zi = steady_state(coeffs)
    zi = zi.reshape(zi.shape + (1,) * (x.ndim - 1))
    y, _ = sosfilt(coeffs.sos, ext, axis=0, zi=_zi_for(zi, ext[0]))
    y = y[::-1]
    y, _ = sosfilt(coeffs.sos, y, axis=0, zi=_zi_for(zi, y[0]))
    return np.ascontiguousarray(y[::-1][pad:pad + x.shape[0]])


def _zi_for(zi, first):
    # sosfilt wants (n_sections, 2, *trailing)
    return zi * first


def analytic_envelope(signal) -> np.ndarray:
    """Magnitude of the analytic signal along axis 0 (FFT construction)."""
    x = np.asarray(signal, dtype=np.float64)
    n = x.shape[0]
    if n < 2:
        raise ArgumentError("envelope needs at least 2 samples")
    spec = np.fft.fft(x, axis=0)
    h = np.zeros(n)
    h[0] = 1.0
    if n % 2 == 0:
        h[n // 2] = 1.0
        h[1:n // 2] = 2.0
    else:
        h[1:(n + 1) // 2] = 2.0
    h = h.reshape((n,) + (1,) * (x.ndim - 1))
    return np.abs(np.fft.ifft(spec * h, axis=0))


def normalize_recording(rec: EmgRecording, mode: str = "max_abs"):
    """Per-channel normalization over the subject's whole recording.

    Returns ``(recording, report)`` where the report holds the offset and
    scale applied to each channel (``x' = (x - offset) / scale``).
    """
    x = rec.channels
    n_ch = rec.n_channels
    if mode == "max_abs":
        scale = np.max(np.abs(x), axis=0) if x.shape[0] else np.zeros(n_ch)
        zero = np.flatnonzero(scale == 0)
        if zero.size:
            raise DegenerateError(f"subject {rec.subject_id}: channel {zero[0] + 1} is all zero")
        offset = np.zeros(n_ch)
    elif mode == "z_score":
        offset = x.mean(axis=0)
        scale = x.std(axis=0)
        zero = np.flatnonzero(scale == 0)
        if zero.size:
            raise DegenerateError(f"subject {rec.subject_id}: channel {zero[0] + 1} has zero variance")
    elif mode == "none":
        offset, scale = np.zeros(n_ch), np.ones(n_ch)
    else:
        raise ArgumentError(f"unknown normalization {mode!r}; expected one of {NORMALIZATIONS}")
    report = {"mode": mode, "offset": offset.tolist(), "scale": scale.tolist()}
    return rec.with_channels((x - offset) / scale, normalization=report), report


@dataclass(frozen=True)
class PreprocessConfig:
    notch_hz: Optional[float] = 60.0
    notch_q: float = 30.0
    lowpass_cutoff_hz: float = 0.6
    lowpass_order: int = 4
    zero_phase: bool = True
    stage_order: str = "filter_then_envelope"
    normalization: str = "max_abs"

    def validate(self, sample_rate_hz: Optional[float] = None):
        if self.lowpass_order < 2 or self.lowpass_order % 2:
            raise ArgumentError(f"lowpass_order must be even and >= 2, got {self.lowpass_order}")
        if self.lowpass_cutoff_hz <= 0:
            raise ArgumentError("lowpass_cutoff_hz must be positive")
        if sample_rate_hz is not None and self.lowpass_cutoff_hz >= sample_rate_hz / 2:
            raise DesignError(f"cutoff {self.lowpass_cutoff_hz} Hz is at or above Nyquist")
        if self.stage_order not in STAGE_ORDERS:
            raise ArgumentError(f"stage_order must be one of {STAGE_ORDERS}")
        if self.normalization not in NORMALIZATIONS:
            raise ArgumentError(f"normalization must be one of {NORMALIZATIONS}")

    def to_dict(self) -> dict:
        return asdict(self)

    def digest(self) -> str:
        blob = json.dumps(self.to_dict(), sort_keys=True).encode()
        return hashlib.sha256(blob).hexdigest()[:16]


def preprocess(rec: EmgRecording, cfg: PreprocessConfig = PreprocessConfig()) -> EmgRecording:
    """Notch, then low-pass and envelope in the configured order, then normalize."""
    fs = rec.sample_rate_hz
    cfg.validate(fs)
    x = rec.channels
    if cfg.notch_hz:
        x = apply_filter(x, design_notch(cfg.notch_hz, cfg.notch_q, fs), cfg.zero_phase)
    lp = design_butterworth_lowpass(cfg.lowpass_order, cfg.lowpass_cutoff_hz, fs)
    if cfg.stage_order == "filter_then_envelope":
        x = analytic_envelope(apply_filter(x, lp, cfg.zero_phase))
    else:
        x = apply_filter(analytic_envelope(x), lp, cfg.zero_phase)
    out = rec.with_channels(x, preprocess=cfg.to_dict())
    out, _ = normalize_recording(out, cfg.normalization)
    return out
