"""Synthetic multi-channel recordings with exact ground truth.

Each neuron fires as an independent homogeneous Poisson process.  A spike
scheduled on grid point t0 with sub-sample offset delta contributes the
band-limited evaluation of the neuron's template on the sample grid
offset by delta (windowed-sinc interpolation), and its true time is
recorded as t0 + delta: sorting should report exactly that number.
Auto-correlated Gaussian noise is added on top.  Everything is
deterministic given the seed.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from scipy.signal import lfilter

from .errors import ParameterError
from .ingest import Recording, STAGE_RAW, atomic_write_text

SINC_HALF_WIDTH = 32
JITTER_UNIFORM = "uniform_half_sample"
JITTER_NONE = "none"

# spawn key reserved for the noise stream, clear of any neuron index
_NOISE_KEY = 1 << 20


@dataclass(frozen=True)
class NeuronSpec:
    """True waveform (channels x support samples, MAD units) and rate."""

    template: np.ndarray
    rate_hz: float

    def __post_init__(self):
        t = np.asarray(self.template, dtype=np.float64)
        if t.ndim != 2 or t.shape[1] < 3:
            raise ParameterError(f"template must be channels x >=3 samples, got {t.shape}")
        if not np.all(np.isfinite(t)):
            raise ParameterError("template contains non-finite values")
        if self.rate_hz <= 0:
            raise ParameterError(f"firing rate must be positive, got {self.rate_hz}")
        object.__setattr__(self, "template", t)

    @property
    def channels(self) -> int:
        return self.template.shape[0]

    @property
    def support_width(self) -> int:
        return self.template.shape[1]

    @property
    def peak_position(self) -> int:
        return int(np.argmax(np.abs(self.template).max(axis=0)))


@dataclass(frozen=True)
class NoiseModel:
    """Stationary AR(1) Gaussian noise, unit-variance-scaled to sigma."""

    sigma: float = 1.0
    ar_coeff: float = 0.4

    def __post_init__(self):
        if self.sigma < 0:
            raise ParameterError(f"noise sigma must be >= 0, got {self.sigma}")
        if not 0 <= self.ar_coeff < 1:
            raise ParameterError(f"AR coefficient must lie in [0, 1), got {self.ar_coeff}")


@dataclass(frozen=True)
class JitterModel:
    """Sub-sample offset law: uniform over one sampling period, or none."""

    distribution: str = JITTER_UNIFORM

    def __post_init__(self):
        if self.distribution not in (JITTER_UNIFORM, JITTER_NONE):
            raise ParameterError(f"unknown jitter distribution {self.distribution!r}")

    @property
    def sigma_delta(self) -> float:
        if self.distribution == JITTER_UNIFORM:
            return 1.0 / np.sqrt(12.0)
        return 0.0


@dataclass
class GroundTruth:
    """The recording plus the (neuron_id, true_time_samples) list."""

    spikes: list[tuple[int, float]]
    recording: Recording

    def __post_init__(self):
        times = [t for _, t in self.spikes]
        if any(a > b for a, b in zip(times, times[1:])):
            raise ParameterError("ground-truth spikes must be sorted by time")
        if times and (times[0] < 0 or times[-1] >= self.recording.samples):
            raise ParameterError("ground-truth spike times must lie inside the recording")

    def times_of(self, neuron_id: int) -> np.ndarray:
        return np.array([t for n, t in self.spikes if n == neuron_id], dtype=np.float64)


def _windowed_sinc(u: np.ndarray, half_width: int) -> np.ndarray:
    w = np.where(np.abs(u) <= half_width,
                 0.5 * (1.0 + np.cos(np.pi * u / half_width)), 0.0)
    return np.sinc(u) * w


def sinc_shift(row: np.ndarray, delta: float,
               half_width: int = SINC_HALF_WIDTH) -> np.ndarray:
    """Band-limited evaluation of a sampled waveform at grid + delta.

    out[j] approximates the underlying continuous waveform at j + delta;
    delta = 0 reproduces the input exactly.  Used both for spike placement
    and as the accuracy reference in tests.
    """
    row = np.asarray(row, dtype=np.float64)
    if row.ndim != 1:
        raise ParameterError(f"sinc_shift works on one channel row, got ndim={row.ndim}")
    n = row.size
    u = np.arange(n)[:, None] + delta - np.arange(n)[None, :]
    return _windowed_sinc(u, half_width) @ row


def _placement_block(template: np.ndarray, delta: float, pad: int) -> np.ndarray:
    """Template evaluated at grid - delta over support extended by pad.

    Shifting the waveform delta samples later puts its peak at exactly
    t0 + delta on the trace, so a cut anchored at t0 sees f(t + delta)
    and the jitter estimator recovers -delta.
    """
    w = template.shape[1]
    coords = np.arange(-pad, w + pad)
    u = coords[:, None] - delta - np.arange(w)[None, :]
    return template @ _windowed_sinc(u, SINC_HALF_WIDTH).T


def render_spike_train(neuron: NeuronSpec, times: np.ndarray, n_samples: int,
                       ) -> tuple[np.ndarray, list[float]]:
    """Noise-free trace for one neuron's spikes at continuous times.

    Each time splits into its nearest grid point and a sub-sample offset.
    Spikes whose padded support would clip an edge are dropped; the times
    actually placed are returned alongside the trace.
    """
    trace = np.zeros((neuron.channels, n_samples))
    pad = SINC_HALF_WIDTH
    p = neuron.peak_position
    placed = []
    for t in np.atleast_1d(np.asarray(times, dtype=np.float64)):
        t0 = int(np.round(t))
        delta = float(t - t0)
        start = t0 - p - pad
        stop = start + neuron.support_width + 2 * pad
        if start < 0 or stop > n_samples:
            continue
        trace[:, start:stop] += _placement_block(neuron.template, delta, pad)
        placed.append(t)
    return trace, placed


def generate(neurons: list[NeuronSpec], noise: NoiseModel, jitter: JitterModel,
             duration_s: float, rate_hz: float, seed: int) -> GroundTruth:
    """Simulate a recording; empty neuron list gives pure noise.

    Per-neuron randomness comes from SeedSequence(seed, spawn_key=(i,)),
    the noise stream from its own reserved key, so adding a neuron never
    perturbs the others' spike trains.
    """
    if duration_s <= 0:
        raise ParameterError(f"duration must be positive, got {duration_s}")
    if rate_hz <= 0:
        raise ParameterError(f"sampling rate must be positive, got {rate_hz}")
    channel_counts = {n.channels for n in neurons}
    if len(channel_counts) > 1:
        raise ParameterError(f"neurons disagree on channel count: {sorted(channel_counts)}")
    channels = channel_counts.pop() if channel_counts else 1
    n_samples = int(round(duration_s * rate_hz))
    trace = np.zeros((channels, n_samples))
    spikes: list[tuple[int, float]] = []
    for i, neuron in enumerate(neurons):
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(i,)))
        arrivals = []
        t = rng.exponential(1.0 / neuron.rate_hz)
        while t < duration_s:
            arrivals.append(t)
            t += rng.exponential(1.0 / neuron.rate_hz)
        grid = np.round(np.asarray(arrivals) * rate_hz)
        if jitter.distribution == JITTER_UNIFORM:
            deltas = rng.uniform(-0.5, 0.5, size=grid.size)
        else:
            deltas = np.zeros(grid.size)
        contribution, placed = render_spike_train(neuron, grid + deltas, n_samples)
        trace += contribution
        spikes.extend((i, t) for t in placed)
    if noise.sigma > 0:
        rng = np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(_NOISE_KEY,)))
        eps = rng.standard_normal((channels, n_samples))
        gain = noise.sigma * np.sqrt(1.0 - noise.ar_coeff ** 2)
        trace += lfilter([gain], [1.0, -noise.ar_coeff], eps, axis=1)
    spikes.sort(key=lambda s: s[1])
    rec = Recording(data=trace, rate_hz=rate_hz, stage=STAGE_RAW)
    return GroundTruth(spikes=spikes, recording=rec)


def dog_template(channel_gains, peak_amplitude: float, sigma_narrow: float,
                 lobe_ratio: float = 0.6, support: int = 81) -> np.ndarray:
    """Difference-of-Gaussians spike shape scaled per channel.

    sum of a narrow positive Gaussian and a wide negative one; smooth
    everywhere, so a second-order Taylor expansion is accurate over half a
    sample.  Peak amplitude is exact on the strongest channel.
    """
    gains = np.asarray(channel_gains, dtype=np.float64)
    if gains.ndim != 1 or gains.size < 1:
        raise ParameterError("channel_gains must be a 1-D vector")
    if not 0 < lobe_ratio < 1:
        raise ParameterError(f"lobe_ratio must lie in (0, 1), got {lobe_ratio}")
    u = np.arange(support) - support // 2
    shape = (np.exp(-u ** 2 / (2.0 * sigma_narrow ** 2))
             - lobe_ratio * np.exp(-u ** 2 / (2.0 * (2.0 * sigma_narrow) ** 2)))
    shape *= peak_amplitude / (1.0 - lobe_ratio)
    return gains[:, None] * shape[None, :] / np.max(np.abs(gains))


_LOCUST_GAINS = np.array([
    [1.00, 0.55, 0.20, 0.05],
    [0.10, 1.00, 0.50, 0.15],
    [0.05, 0.25, 1.00, 0.55],
    [0.45, 0.10, 0.30, 1.00],
    [1.00, 0.05, 0.60, 0.25],
    [0.30, 1.00, 0.05, 0.50],
    [0.60, 0.35, 1.00, 0.05],
    [0.05, 0.60, 0.35, 1.00],
    [1.00, 0.80, 0.05, 0.45],
    [0.40, 0.05, 0.80, 1.00],
])

_LOCUST_SIGMAS = np.array([2.6, 3.0, 3.4, 2.8, 3.8, 2.5, 3.2, 4.0, 2.9, 3.6])
# lobe ratios stay below 0.6 so the positive peak always dominates the
# trough; past ~0.7 the trough wins and detection lands off the peak
_LOCUST_LOBES = np.array([0.50, 0.56, 0.52, 0.60, 0.48, 0.58, 0.54, 0.45, 0.55, 0.60])


def locust_like_neurons() -> list[NeuronSpec]:
    """Ten separable tetrode neurons: peak amplitudes log-spaced 15 down
    to 5 MAD units, the big ones firing slowest (0.5 up to 3 Hz).

    Neurons come out sorted by the L1 norm of their waveform, matching
    the canonical cluster order, so neuron ids line up with cluster ids
    when sorting succeeds.
    """
    amps = np.geomspace(15.0, 5.0, 10)
    templates = [dog_template(_LOCUST_GAINS[i], amps[i],
                              _LOCUST_SIGMAS[i], _LOCUST_LOBES[i])
                 for i in range(10)]
    templates.sort(key=lambda t: -np.abs(t).sum())
    rates = np.linspace(0.5, 3.0, 10)
    return [NeuronSpec(template=t, rate_hz=r) for t, r in zip(templates, rates)]


def locust_like_scenario(seed: int) -> GroundTruth:
    """Canned 4-channel, 15 kHz, 20 s scenario with 10 neurons."""
    return generate(locust_like_neurons(), NoiseModel(sigma=1.0, ar_coeff=0.4),
                    JitterModel(JITTER_UNIFORM), duration_s=20.0,
                    rate_hz=15000.0, seed=seed)


def save_truth_csv(truth: GroundTruth, path) -> None:
    """CSV with one row per true spike: neuron, true_time_samples."""
    lines = ["neuron,true_time_samples"]
    for neuron_id, t in truth.spikes:
        lines.append(f"{neuron_id},{t:.17g}")
    atomic_write_text(path, "\n".join(lines) + "\n")


def load_truth_csv(path) -> list[tuple[int, float]]:
    """Read a truth file written by save_truth_csv."""
    lines = [ln for ln in Path(path).read_text().splitlines() if ln]
    if not lines or lines[0] != "neuron,true_time_samples":
        raise ParameterError(f"{path}: not a truth file")
    out = []
    for ln in lines[1:]:
        n, t = ln.split(",")
        out.append((int(n), float(t)))
    return out


def match_to_truth(reported: list[tuple[int, float]],
                   truth: list[tuple[int, float]],
                   tolerance: float = 0.5) -> dict:
    """Greedy nearest-time matching of reported spikes to true spikes.

    Each true spike can absorb one report within `tolerance` samples.
    Returns counts: matched (right neuron), misassigned (time matched,
    wrong neuron), unmatched_reported, missed_truth.
    """
    truth_times = np.array([t for _, t in truth])
    truth_ids = np.array([n for n, _ in truth])
    taken = np.zeros(len(truth), dtype=bool)
    matched = misassigned = unmatched = 0
    for neuron_id, t in sorted(reported, key=lambda s: s[1]):
        if truth_times.size:
            gaps = np.abs(truth_times - t)
            gaps[taken] = np.inf
            j = int(np.argmin(gaps))
            if gaps[j] <= tolerance:
                taken[j] = True
                if truth_ids[j] == neuron_id:
                    matched += 1
                else:
                    misassigned += 1
                continue
        unmatched += 1
    return {"matched": matched, "misassigned": misassigned,
            "unmatched_reported": unmatched,
            "missed_truth": int((~taken).sum())}
