"""Causal signal conditioning for raw inductance readings.

Butterworth low-pass design (bilinear transform with frequency
pre-warping, realized as cascaded second-order sections) plus a
streaming one-sample-at-a-time application and simple decimation to
bridge the sensor rate to the control rate.  Batch filtering is defined
as the fold of the streaming step, so the two are bit-identical by
construction.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np
from scipy import signal as _sps

__all__ = [
    "InvalidFilterSpecError",
    "FilterSpec",
    "FilterState",
    "design",
    "prime",
    "step",
    "filter_series",
    "decimate",
    "frequency_response",
    "is_stable",
]


class InvalidFilterSpecError(ValueError):
    """Filter specification violates its invariants (e.g. cutoff >= Nyquist)."""


@dataclass(frozen=True)
class FilterSpec:
    """Low-pass design request: order, cutoff frequency, sampling rate (Hz)."""

    order: int = 3
    cutoff_hz: float = 10.0
    sample_rate_hz: float = 100.0

    def __post_init__(self):
        if int(self.order) != self.order or self.order < 1:
            raise InvalidFilterSpecError(f"order must be a positive integer, got {self.order}")
        if not (0.0 < self.cutoff_hz < self.sample_rate_hz / 2.0):
            raise InvalidFilterSpecError(
                f"cutoff {self.cutoff_hz} Hz must lie in (0, Nyquist={self.sample_rate_hz / 2} Hz)"
            )


class FilterState:
    """Cascaded second-order sections with their delay lines.

    Single-owner mutable: one state per stream.  ``copy()`` forks the
    delay line for an independent stream.
    """

    def __init__(self, sos: np.ndarray, spec: FilterSpec):
        self.sos = np.array(sos, dtype=float)
        self.spec = spec
        self.zi = np.zeros((self.sos.shape[0], 2))

    def copy(self) -> "FilterState":
        st = FilterState(self.sos, self.spec)
        st.zi = self.zi.copy()
        return st


def design(spec: FilterSpec) -> FilterState:
    """Design the discrete Butterworth low-pass for ``spec``.

    Uses the bilinear transform with cutoff pre-warping; the cascade has
    unit DC gain and the half-power point at the cutoff.  The result is
    verified stable (all section poles strictly inside the unit circle).
    """
    sos = _sps.butter(spec.order, spec.cutoff_hz, btype="low",
                      fs=spec.sample_rate_hz, output="sos")
    state = FilterState(sos, spec)
    if not is_stable(state):
        raise InvalidFilterSpecError(f"designed filter unstable for {spec}")
    return state


def prime(state: FilterState, value: float) -> FilterState:
    """Load the delay line with the steady state for a constant input.

    Avoids the startup transient when a stream begins near ``value``.
    """
    state.zi = _sps.sosfilt_zi(state.sos) * float(value)
    return state


def step(state: FilterState, sample: float) -> float:
    """Advance the filter by one sample and return the filtered value."""
    y = float(sample)
    sos = state.sos
    zi = state.zi
    for s in range(sos.shape[0]):
        b0, b1, b2, _, a1, a2 = sos[s]
        out = b0 * y + zi[s, 0]
        zi[s, 0] = b1 * y - a1 * out + zi[s, 1]
        zi[s, 1] = b2 * y - a2 * out
        y = out
    return y


def filter_series(state: FilterState, samples) -> np.ndarray:
    """Filter a whole series through ``state`` (advances its delay line).

    Defined as sequential application of ``step``; bit-identical to
    streaming the samples one at a time.
    """
    return np.array([step(state, v) for v in np.asarray(samples, dtype=float)])


def decimate(series, factor: int) -> np.ndarray:
    """Keep every ``factor``-th sample, phase-aligned to the first one.

    The input must already be band-limited below the post-decimation
    Nyquist (the designed low-pass does this at the default rates).
    """
    if int(factor) != factor or factor < 1:
        raise ValueError(f"decimation factor must be an integer >= 1, got {factor}")
    return np.asarray(series, dtype=float)[:: int(factor)].copy()


def frequency_response(state: FilterState, freqs_hz) -> np.ndarray:
    """Complex response of the cascade at the given frequencies (Hz)."""
    w = 2.0 * math.pi * np.asarray(freqs_hz, dtype=float) / state.spec.sample_rate_hz
    _, h = _sps.sosfreqz(state.sos, worN=w)
    return h


def is_stable(state: FilterState) -> bool:
    """True when every feedback polynomial has its roots strictly inside the unit circle."""
    for s in range(state.sos.shape[0]):
        roots = np.roots(state.sos[s, 3:])
        if roots.size and np.max(np.abs(roots)) >= 1.0:
            return False
    return True
