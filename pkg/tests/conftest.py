"""Shared fixtures and independent reference computations.

The reference helpers here deliberately avoid the code paths they check:
the shift reference below interpolates with numpy's sinc directly, the
principal-component reference solves the 2x2 characteristic polynomial by
hand, and the thinning check verifies the selection property rather than
re-running the selection.
"""

import warnings

import numpy as np
import pytest
from scipy.optimize import linear_sum_assignment

from peelsort.cluster import kmeans, order_clusters
from peelsort.detect import DetectionParams, detect
from peelsort.events import (CutSpec, Event, EventSample, flag_superpositions,
                             make_cuts, non_superposed, optimal_cut_bounds)
from peelsort.ingest import Recording, STAGE_NORMALIZED
from peelsort.jitter import Template, build_templates
from peelsort.peel import Catalogue, peel
from peelsort.preprocess import normalize
from peelsort.reduce import fit_pca, project
from peelsort.synth import locust_like_scenario


# --- reference computations (independent of the implementation under test) ---

def bandlimited_shift(row, delta, half_width=32):
    """Evaluate the band-limited interpolation of `row` at grid + delta.

    Straightforward windowed-sinc sum, written against numpy.sinc only so
    it shares no code with the package's placement or estimation routines.
    """
    row = np.asarray(row, dtype=float)
    n = row.size
    out = np.zeros(n)
    for j in range(n):
        t = j + delta
        m0 = max(0, int(np.floor(t)) - half_width)
        m1 = min(n, int(np.ceil(t)) + half_width + 1)
        m = np.arange(m0, m1)
        u = t - m
        w = 0.5 * (1.0 + np.cos(np.pi * u / half_width))
        w[np.abs(u) > half_width] = 0.0
        out[j] = np.sum(row[m] * np.sinc(u) * w)
    return out


def shift_rows(rows, delta, half_width=32):
    return np.vstack([bandlimited_shift(r, delta, half_width) for r in rows])


def grid_delta_reference(g, f, half=0.75, step=1e-3):
    """Brute-force offset estimate: scan a dense grid of band-limited
    shifts of f and return the shift minimizing the squared residual."""
    grid = np.arange(-half, half + step / 2, step)
    best, best_rss = 0.0, np.inf
    for d in grid:
        rss = float(np.sum((g - shift_rows(f, d)) ** 2))
        if rss < best_rss:
            best, best_rss = d, rss
    return best


def principal_axis_2x2(xy):
    """Dominant eigenvector of the 2x2 sample covariance, solved by hand
    from the characteristic polynomial (divisor n-1, largest root)."""
    xy = np.asarray(xy, dtype=float)
    d = xy - xy.mean(axis=0)
    n = xy.shape[0]
    a = np.sum(d[:, 0] ** 2) / (n - 1)
    b = np.sum(d[:, 0] * d[:, 1]) / (n - 1)
    c = np.sum(d[:, 1] ** 2) / (n - 1)
    lam = 0.5 * (a + c + np.sqrt((a - c) ** 2 + 4 * b ** 2))
    v = np.array([b, lam - a]) if abs(b) > 1e-15 else np.array([1.0, 0.0])
    v = v / np.linalg.norm(v)
    if v[np.argmax(np.abs(v))] < 0:
        v = -v
    return lam, v


def hungarian_agreement(labels_a, labels_b):
    """Best label-permutation agreement count between two partitions."""
    labels_a = np.asarray(labels_a)
    labels_b = np.asarray(labels_b)
    ka, kb = labels_a.max() + 1, labels_b.max() + 1
    conf = np.zeros((ka, kb), dtype=int)
    np.add.at(conf, (labels_a, labels_b), 1)
    rows, cols = linear_sum_assignment(-conf)
    return int(conf[rows, cols].sum())


def assert_valid_thinning(kept, candidates, aggregate, min_separation):
    """Check the selection property: kept indices are separated, and every
    rejected candidate loses to a kept neighbor (larger value, or equal
    value at a smaller index)."""
    kept = np.asarray(kept)
    assert np.all(np.diff(kept) >= min_separation)
    kept_set = set(int(i) for i in kept)
    for c in candidates:
        if int(c) in kept_set:
            continue
        near = kept[np.abs(kept - c) < min_separation]
        assert near.size, f"candidate {c} rejected with no kept neighbor"
        beats = [k for k in near
                 if aggregate[k] > aggregate[c]
                 or (aggregate[k] == aggregate[c] and k < c)]
        assert beats, f"candidate {c} rejected by no better neighbor"


# --- construction helpers ---

def gauss_rows(gains, amplitude, sigma, width):
    """Multi-channel Gaussian bump peaking at the center sample."""
    gains = np.asarray(gains, dtype=float)
    gains = gains / np.abs(gains).max()
    u = np.arange(width) - width // 2
    bump = amplitude * np.exp(-0.5 * (u / sigma) ** 2)
    return gains[:, None] * bump[None, :]


def gauss_rows_derivative(gains, amplitude, sigma, width):
    """Analytic first derivative of gauss_rows with respect to position."""
    gains = np.asarray(gains, dtype=float)
    gains = gains / np.abs(gains).max()
    u = np.arange(width) - width // 2
    d = -amplitude * (u / sigma ** 2) * np.exp(-0.5 * (u / sigma) ** 2)
    return gains[:, None] * d[None, :]


def gauss_rows_second_derivative(gains, amplitude, sigma, width):
    """Analytic second derivative of gauss_rows with respect to position."""
    gains = np.asarray(gains, dtype=float)
    gains = gains / np.abs(gains).max()
    u = np.arange(width) - width // 2
    d = amplitude * (u ** 2 / sigma ** 4 - 1.0 / sigma ** 2) * np.exp(
        -0.5 * (u / sigma) ** 2)
    return gains[:, None] * d[None, :]


def analytic_gauss_template(gains, amplitude, sigma, width, neuron_id=0):
    """Template whose f1/f2 are exact derivatives rather than differences."""
    from peelsort.jitter import Template

    f = gauss_rows(gains, amplitude, sigma, width)
    return Template(neuron_id=neuron_id, f=f,
                    f1=gauss_rows_derivative(gains, amplitude, sigma, width),
                    f2=gauss_rows_second_derivative(gains, amplitude, sigma, width),
                    l1_size=float(np.abs(f).sum()))


def centdiff_rows(rows):
    """Row-wise central difference, one-sided at the ends."""
    rows = np.asarray(rows, dtype=float)
    out = np.empty_like(rows)
    out[:, 1:-1] = (rows[:, 2:] - rows[:, :-2]) / 2.0
    out[:, 0] = rows[:, 1] - rows[:, 0]
    out[:, -1] = rows[:, -1] - rows[:, -2]
    return out


def template_from_rows(neuron_id, rows):
    rows = np.asarray(rows, dtype=float)
    f1 = centdiff_rows(rows)
    return Template(neuron_id=neuron_id, f=rows, f1=f1, f2=centdiff_rows(f1),
                    l1_size=float(np.sum(np.abs(rows))))


def sample_from_matrix(rows, channels=1):
    """Wrap an n x d matrix as an EventSample (d = channels * width)."""
    rows = np.asarray(rows, dtype=float)
    n, d = rows.shape
    width = d // channels
    spec = CutSpec(before=1, after=width - 2)
    events = [Event(peak_index=1000 * (i + 1),
                    cuts=rows[i].reshape(channels, width),
                    superposed=False)
              for i in range(n)]
    return EventSample(events=events, spec=spec, channels=channels,
                       n_dropped_edge=0)


def normalized_recording(data, rate_hz=15000.0):
    """Wrap already-unit-scale data as a normalized-stage Recording."""
    return Recording(data=np.asarray(data, dtype=float), rate_hz=rate_hz,
                     stage=STAGE_NORMALIZED)


def ar1_noise(channels, n, sigma=1.0, ar=0.4, seed=0):
    rng = np.random.default_rng(seed)
    eps = rng.standard_normal((channels, n))
    out = np.empty_like(eps)
    out[:, 0] = eps[:, 0] * sigma
    scale = sigma * np.sqrt(1.0 - ar * ar)
    for i in range(1, n):
        out[:, i] = ar * out[:, i - 1] + scale * eps[:, i]
    return out


# --- session fixtures: one full pipeline run shared by the heavier tests ---

ACCEPTANCE_SEED = 42


@pytest.fixture(scope="session")
def locust_truth():
    return locust_like_scenario(seed=ACCEPTANCE_SEED)


@pytest.fixture(scope="session")
def locust_run(locust_truth):
    """Catalogue from the first half, peel over the whole recording."""
    import time

    raw = locust_truth.recording
    t_start = time.perf_counter()
    whole = normalize(raw)
    half = normalize(Recording(data=raw.data[:, :raw.samples // 2],
                               rate_hz=raw.rate_hz, stage=raw.stage))
    params = DetectionParams()
    peaks = detect(half, params)
    wide = make_cuts(half, peaks, CutSpec(before=80, after=80))
    spec = optimal_cut_bounds(wide, noise_level=1.0)
    sample = flag_superpositions(make_cuts(half, peaks, spec), side_threshold=4.0)
    clean, keep = non_superposed(sample)
    pca = fit_pca(clean)
    projected = project(clean, pca, 4)
    result = order_clusters(kmeans(projected.coords, 10, seed=0, restarts=10), clean)
    templates = build_templates(half, clean, result)
    catalogue = Catalogue(templates=templates, spec=clean.spec,
                          channels=raw.channels, rate_hz=raw.rate_hz)
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        train, decisions, residual = peel(whole, catalogue, params)
    wall_s = time.perf_counter() - t_start
    return {
        "wall_s": wall_s,
        "truth": locust_truth,
        "whole": whole,
        "half": half,
        "peaks": peaks,
        "sample": sample,
        "clean": clean,
        "keep": keep,
        "pca": pca,
        "projected": projected,
        "result": result,
        "catalogue": catalogue,
        "train": train,
        "decisions": decisions,
        "residual": residual,
        "params": params,
    }


def truth_partition(truth, sample, keep, tolerance=2.0):
    """Ground-truth neuron id for each kept event, by nearest true spike."""
    times = np.array([t for _, t in truth.spikes])
    ids = np.array([n for n, _ in truth.spikes])
    labels = []
    for idx in sample.peak_indices()[keep]:
        j = int(np.argmin(np.abs(times - idx)))
        labels.append(ids[j] if abs(times[j] - idx) <= tolerance else -1)
    return np.asarray(labels)
