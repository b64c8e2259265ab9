"""High-pass filtering and median/MAD normalization.

Each channel is median-subtracted and divided by its median absolute
deviation so the noise level is 1 on every electrode and detection
thresholds are comparable across channels.  An optional linear-phase FIR
high-pass removes drift first when the acquisition chain has not already
done so.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np
from scipy.signal import firwin

from .errors import DegenerateDataError, ParameterError
from .ingest import Recording, STAGE_NORMALIZED, STAGE_RAW

# Scale making the MAD a consistent estimator of the standard deviation for
# Gaussian data (1 / Phi^-1(3/4)).  All thresholds in the package assume it.
MAD_SCALE = 1.4826


@dataclass(frozen=True)
class FilterSpec:
    """High-pass FIR design: cutoff frequency and (odd) tap count."""

    cutoff_hz: float = 300.0
    taps: int = 129

    def __post_init__(self):
        if self.cutoff_hz <= 0:
            raise ParameterError(f"cutoff must be positive, got {self.cutoff_hz}")
        if self.taps < 3 or self.taps % 2 == 0:
            raise ParameterError(f"taps must be an odd count >= 3, got {self.taps}")


def mad(values, axis=None) -> np.ndarray | float:
    """Median absolute deviation scaled by 1.4826.

    The scaling makes the result estimate the standard deviation of the
    recording noise; mad({1,2,3,4,5}) == 1.4826.
    """
    values = np.asarray(values, dtype=np.float64)
    if values.size == 0:
        raise ParameterError("mad of an empty sequence")
    med = np.median(values, axis=axis, keepdims=axis is not None)
    return MAD_SCALE * np.median(np.abs(values - med), axis=axis)


def highpass_kernel(spec: FilterSpec, rate_hz: float) -> np.ndarray:
    """Windowed-sinc high-pass kernel with an exact zero at DC.

    Built by spectral inversion of a Hamming-windowed low-pass: the low-pass
    has unit DC gain, so negating it and adding 1 at the center tap nulls DC
    to float precision.
    """
    nyquist = rate_hz / 2.0
    if spec.cutoff_hz >= nyquist:
        raise ParameterError(f"cutoff {spec.cutoff_hz} Hz >= Nyquist {nyquist} Hz")
    kernel = -firwin(spec.taps, spec.cutoff_hz, window="hamming", fs=rate_hz)
    kernel[spec.taps // 2] += 1.0
    return kernel


def highpass(rec: Recording, spec: FilterSpec) -> Recording:
    """High-pass filter every channel of a raw recording.

    The symmetric odd-length kernel is applied with 'same'-mode convolution,
    which compensates the (taps-1)/2 group delay; the first and last
    (taps-1)/2 samples are computed against zero padding and are unreliable.
    """
    if rec.stage != STAGE_RAW:
        raise ParameterError(f"highpass expects a raw recording, got stage {rec.stage!r}")
    kernel = highpass_kernel(spec, rec.rate_hz)
    filtered = np.vstack([np.convolve(chan, kernel, mode="same") for chan in rec.data])
    return Recording(data=filtered, rate_hz=rec.rate_hz, stage=STAGE_RAW)


def normalize(rec: Recording) -> Recording:
    """Median-subtract and MAD-divide each channel.

    Returns a normalized-stage Recording that remembers the per-channel
    (median, mad) pair, so amplitudes can be mapped back to input units.

    Raises
    ------
    DegenerateDataError
        If any channel has zero MAD (constant or near-constant data).
    """
    medians = np.median(rec.data, axis=1)
    mads = mad(rec.data, axis=1)
    dead = np.flatnonzero(mads == 0.0)
    if dead.size:
        raise DegenerateDataError(
            f"channel(s) {', '.join(map(str, dead))} have zero MAD; cannot normalize")
    normalized = (rec.data - medians[:, None]) / mads[:, None]
    return Recording(data=normalized, rate_hz=rec.rate_hz, stage=STAGE_NORMALIZED,
                     norm_median=medians, norm_mad=mads)
