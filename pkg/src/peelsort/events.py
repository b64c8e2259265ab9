"""Cutting fixed-width multi-channel events around detected peaks.

The cut length is chosen from data: overly wide cuts are taken first, the
point-wise MAD across them is computed, and the region around the peak
where that MAD rises above the noise floor (1 on normalized traces) is the
window that carries sorting information.  Events with secondary peaks are
flagged as likely superpositions so they can be excluded from model
estimation (they are still classified later, during peeling).
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .detect import PeakList
from .errors import DegenerateDataError, ParameterError
from .ingest import Recording, STAGE_NORMALIZED, STAGE_RESIDUAL, atomic_write_text
from .preprocess import mad


@dataclass(frozen=True)
class CutSpec:
    """Samples kept before and after the peak; width = before + after + 1."""

    before: int
    after: int

    def __post_init__(self):
        if self.before < 1 or self.after < 1:
            raise ParameterError(f"cut bounds must be >= 1 each side, got ({self.before}, {self.after})")

    @property
    def width(self) -> int:
        return self.before + self.after + 1


@dataclass
class Event:
    """One cut: (channels, width) window of normalized amplitudes around a peak."""

    peak_index: int
    cuts: np.ndarray
    superposed: bool = False


@dataclass
class EventSample:
    """A set of events sharing one CutSpec and channel count."""

    events: list[Event]
    spec: CutSpec
    channels: int
    n_dropped_edge: int = 0

    def __post_init__(self):
        for ev in self.events:
            if ev.cuts.shape != (self.channels, self.spec.width):
                raise ParameterError(
                    f"event at {ev.peak_index} has shape {ev.cuts.shape}, "
                    f"expected ({self.channels}, {self.spec.width})")

    def __len__(self) -> int:
        return len(self.events)

    def as_array(self) -> np.ndarray:
        """Stack to (n_events, channels, width)."""
        return np.stack([ev.cuts for ev in self.events])

    def flattened(self) -> np.ndarray:
        """Stack to (n_events, channels * width), channel-major rows."""
        return self.as_array().reshape(len(self.events), -1)

    def peak_indices(self) -> np.ndarray:
        return np.array([ev.peak_index for ev in self.events], dtype=np.int64)

    def superposed_mask(self) -> np.ndarray:
        return np.array([ev.superposed for ev in self.events], dtype=bool)


def make_cuts(rec: Recording, peaks: PeakList, spec: CutSpec) -> EventSample:
    """Cut one event per peak whose window fits inside the trace.

    Peaks too close to an edge are dropped and counted in
    ``EventSample.n_dropped_edge``.
    """
    if rec.stage not in (STAGE_NORMALIZED, STAGE_RESIDUAL):
        raise ParameterError(f"make_cuts expects a normalized or residual recording, got {rec.stage!r}")
    events = []
    dropped = 0
    for idx in peaks.indices:
        start = idx - spec.before
        stop = idx + spec.after + 1
        if start < 0 or stop > rec.samples:
            dropped += 1
            continue
        events.append(Event(peak_index=int(idx), cuts=rec.data[:, start:stop].copy()))
    if not events:
        raise DegenerateDataError("no event window fits inside the recording")
    return EventSample(events=events, spec=spec, channels=rec.channels, n_dropped_edge=dropped)


def pointwise_mad(sample: EventSample) -> np.ndarray:
    """Per-channel, per-position MAD across events, shape (channels, width)."""
    if len(sample) < 2:
        raise ParameterError(f"point-wise MAD needs >= 2 events, got {len(sample)}")
    return mad(sample.as_array(), axis=0)


def optimal_cut_bounds(wide_sample: EventSample, noise_level: float = 1.0) -> CutSpec:
    """Choose the cut window from the MAD profile of overly wide cuts.

    The max-over-channels point-wise MAD is scanned outward from the peak
    position; the window ends at the first crossing below ``noise_level``
    on each side.  Bounds are clamped to >= 1 sample per side.

    Raises
    ------
    DegenerateDataError
        If the MAD profile never exceeds ``noise_level`` (no signal).
    """
    profile = pointwise_mad(wide_sample).max(axis=0)
    if profile.max() <= noise_level:
        raise DegenerateDataError(
            f"point-wise MAD never exceeds noise level {noise_level}; no signal to cut")
    center = wide_sample.spec.before
    left = center
    while left > 0 and profile[left - 1] > noise_level:
        left -= 1
    right = center
    while right < profile.size - 1 and profile[right + 1] > noise_level:
        right += 1
    return CutSpec(before=max(center - left, 1), after=max(right - center, 1))


def _row_local_maxima(row: np.ndarray) -> np.ndarray:
    interior = row[1:-1]
    hits = (interior >= row[:-2]) & (interior > row[2:])
    return np.flatnonzero(hits) + 1


def flag_superpositions(sample: EventSample, side_threshold: float,
                        exclude_radius: int = 7) -> EventSample:
    """Flag events showing a side peak on any channel.

    An event is superposed when some channel has a local maximum above
    ``side_threshold`` at a position more than ``exclude_radius`` samples
    away from the cut center.  Flags only; event data are untouched.
    """
    center = sample.spec.before
    flagged = []
    for ev in sample.events:
        superposed = False
        for row in ev.cuts:
            peaks = _row_local_maxima(row)
            side = peaks[np.abs(peaks - center) > exclude_radius]
            if side.size and np.any(row[side] > side_threshold):
                superposed = True
                break
        flagged.append(Event(peak_index=ev.peak_index, cuts=ev.cuts, superposed=superposed))
    return EventSample(events=flagged, spec=sample.spec, channels=sample.channels,
                       n_dropped_edge=sample.n_dropped_edge)


def non_superposed(sample: EventSample) -> tuple[EventSample, np.ndarray]:
    """Keep only clean events; also return their indices in the input sample."""
    keep = np.flatnonzero(~sample.superposed_mask())
    if keep.size == 0:
        raise DegenerateDataError("every event is flagged as a superposition")
    events = [sample.events[i] for i in keep]
    return (EventSample(events=events, spec=sample.spec, channels=sample.channels,
                        n_dropped_edge=sample.n_dropped_edge), keep)


def export_events_csv(sample: EventSample, path) -> None:
    """One row per event: peak_index, superposed, then channel-major amplitudes."""
    lines = []
    width = sample.spec.width
    header = ["peak_index", "superposed"]
    header += [f"c{c}_t{t}" for c in range(sample.channels) for t in range(width)]
    lines.append(",".join(header))
    for ev in sample.events:
        row = [str(ev.peak_index), "1" if ev.superposed else "0"]
        row += [f"{v:.17g}" for v in ev.cuts.ravel()]
        lines.append(",".join(row))
    atomic_write_text(path, "\n".join(lines) + "\n")
