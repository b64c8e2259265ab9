"""Sub-sample offset estimation against band-limited references."""

import numpy as np
import pytest

from conftest import (analytic_gauss_template, bandlimited_shift,
                      centdiff_rows, gauss_rows, gauss_rows_derivative,
                      grid_delta_reference, normalized_recording, shift_rows,
                      template_from_rows)
from peelsort.detect import PeakList
from peelsort.errors import DegenerateDataError, ParameterError
from peelsort.events import CutSpec, make_cuts
from peelsort.cluster import ClusterResult
from peelsort.ingest import Recording, STAGE_RAW
from peelsort.jitter import (Template, aligned_center, build_templates,
                             derivative_recording, estimate_jitter,
                             estimate_jitter_linear, refine_jitter_newton)


def smooth_template(width=45, amplitude=10.0, sigma=3.0, gains=(1.0, 0.6)):
    return template_from_rows(0, gauss_rows(gains, amplitude, sigma, width))


def skewed_template(width=45):
    """Asymmetric smooth bump; breaks the odd/even symmetry of a Gaussian."""
    u = np.arange(width) - width // 2
    row = 10.0 * np.exp(-0.5 * (u / 3.0) ** 2) + 4.0 * np.exp(-0.5 * ((u - 5) / 5.0) ** 2)
    return template_from_rows(0, row[None, :])


# --- derivative_recording ---

def test_derivative_of_ramp_is_constant():
    rec = normalized_recording(3.0 * np.arange(20, dtype=float)[None, :])
    d = derivative_recording(rec)
    assert np.allclose(d.data, 3.0, atol=1e-12)


def test_derivative_of_constant_is_zero():
    rec = normalized_recording(np.full((2, 15), 7.7))
    assert np.all(derivative_recording(rec).data == 0.0)


def test_derivative_exact_for_quadratic():
    i = np.arange(30, dtype=float)
    rec = normalized_recording((i ** 2)[None, :])
    d = derivative_recording(rec)
    assert np.allclose(d.data[0, 1:-1], 2.0 * i[1:-1], atol=1e-9)


def test_derivative_needs_three_samples():
    with pytest.raises(ParameterError):
        derivative_recording(normalized_recording(np.zeros((1, 2))))


# --- build_templates ---

def place_gaussian_events(n_events, amplitude, sigma, deltas, noise_sigma,
                          seed, spacing=120, width=45):
    """Recording of analytically jittered Gaussian bumps at known peaks."""
    rng = np.random.default_rng(seed)
    before = width // 2
    n = spacing * (n_events + 2)
    data = noise_sigma * rng.standard_normal((1, n))
    peaks = []
    u = np.arange(width, dtype=float) - before
    for i in range(n_events):
        at = spacing * (i + 1)
        bump = amplitude * np.exp(-0.5 * ((u + deltas[i]) / sigma) ** 2)
        data[0, at - before:at - before + width] += bump
        peaks.append(at)
    rec = normalized_recording(data)
    return rec, PeakList(indices=np.asarray(peaks), source_stage="normalized")


def single_cluster_result(n):
    return ClusterResult(labels=np.zeros(n, dtype=np.int64),
                         centers=np.zeros((1, 2)), method="kmeans", K=1,
                         n_pruned=0)


def test_template_of_identical_events_is_exact():
    rec, peaks = place_gaussian_events(5, 10.0, 3.0, np.zeros(5),
                                       noise_sigma=0.0, seed=0)
    sample = make_cuts(rec, peaks, CutSpec(before=22, after=22))
    templates = build_templates(rec, sample, single_cluster_result(5))
    assert len(templates) == 1
    assert np.array_equal(templates[0].f, sample.events[0].cuts)


def test_template_median_near_truth_with_jitter_and_noise():
    rng = np.random.default_rng(7)
    deltas = rng.uniform(-0.5, 0.5, 800)
    rec, peaks = place_gaussian_events(800, 10.0, 4.0, deltas,
                                       noise_sigma=0.2, seed=8)
    sample = make_cuts(rec, peaks, CutSpec(before=22, after=22))
    templates = build_templates(rec, sample, single_cluster_result(800))
    truth = gauss_rows([1.0], 10.0, 4.0, 45)
    assert np.max(np.abs(templates[0].f - truth)) <= 0.05
    truth_d1 = gauss_rows_derivative([1.0], 10.0, 4.0, 45)
    assert np.max(np.abs(templates[0].f1 - truth_d1)) <= 0.1


def test_template_shapes_and_l1():
    rec, peaks = place_gaussian_events(10, 8.0, 3.0, np.zeros(10),
                                       noise_sigma=0.1, seed=9)
    sample = make_cuts(rec, peaks, CutSpec(before=20, after=24))
    t = build_templates(rec, sample, single_cluster_result(10))[0]
    assert t.f.shape == t.f1.shape == t.f2.shape == (1, 45)
    assert t.l1_size == pytest.approx(np.abs(t.f).sum(), abs=1e-9)


def test_small_cluster_rejected_by_name():
    rec, peaks = place_gaussian_events(2, 8.0, 3.0, np.zeros(2),
                                       noise_sigma=0.0, seed=10)
    sample = make_cuts(rec, peaks, CutSpec(before=10, after=10))
    with pytest.raises(DegenerateDataError, match="cluster 0"):
        build_templates(rec, sample, single_cluster_result(2))


def test_build_templates_requires_normalized_stage():
    rec = Recording(data=np.zeros((1, 100)) + np.linspace(0, 1, 100),
                    rate_hz=100.0, stage=STAGE_RAW)
    peaks = PeakList(indices=np.array([50]), source_stage="normalized")
    with pytest.raises(ParameterError):
        build_templates(rec, make_cuts, single_cluster_result(1))


# --- linear estimate ---

def test_linear_zero_for_exact_match():
    t = smooth_template()
    assert estimate_jitter_linear(t.f, t) == 0.0


def test_linear_exact_on_linear_model():
    t = smooth_template()
    g = t.f + 0.3 * t.f1
    assert estimate_jitter_linear(g, t) == pytest.approx(0.3, abs=1e-12)


def test_linear_tracks_bandlimited_shift():
    t = smooth_template()
    g = shift_rows(t.f, 0.25)
    est = estimate_jitter_linear(g, t)
    assert abs(est - 0.25) <= 0.05
    reference = grid_delta_reference(g, t.f)
    assert abs(reference - 0.25) <= 2e-3


def test_linear_flat_template_rejected():
    flat = Template(neuron_id=0, f=np.ones((1, 45)), f1=np.zeros((1, 45)),
                    f2=np.zeros((1, 45)), l1_size=45.0)
    with pytest.raises(DegenerateDataError):
        estimate_jitter_linear(np.ones((1, 45)), flat)


def test_linear_antisymmetric_on_even_template():
    t = smooth_template(gains=(1.0,))
    plus = shift_rows(t.f, 0.3)
    minus = shift_rows(t.f, -0.3)
    assert estimate_jitter_linear(plus, t) == pytest.approx(
        -estimate_jitter_linear(minus, t), abs=1e-9)


# --- Newton refinement ---

def test_newton_exact_when_f2_zero():
    t = smooth_template()
    quadfree = Template(neuron_id=0, f=t.f, f1=t.f1, f2=np.zeros_like(t.f2),
                        l1_size=t.l1_size)
    g = quadfree.f + 0.37 * quadfree.f1
    est = refine_jitter_newton(g, quadfree, 0.37)
    assert est.delta == pytest.approx(0.37, abs=1e-12)
    assert not est.fallback
    # Newton lands on the quadratic's minimizer from any finite start
    est_far = refine_jitter_newton(g, quadfree, -0.2)
    assert est_far.delta == pytest.approx(0.37, abs=1e-12)


def test_newton_beats_linear_on_exact_quadratic_model():
    t = skewed_template()
    g = t.f + 0.3 * t.f1 + 0.045 * t.f2
    lin = estimate_jitter_linear(g, t)
    est = refine_jitter_newton(g, t, lin)
    assert abs(est.delta - 0.3) < abs(lin - 0.3)
    assert abs(est.delta - 0.3) < 0.02


def test_newton_on_bandlimited_shift():
    t = smooth_template()
    g = shift_rows(t.f, 0.4)
    est = estimate_jitter(g, t)
    assert abs(est.delta - 0.4) <= 0.05
    assert est.rss_after < est.rss_before
    reference = grid_delta_reference(g, t.f)
    assert abs(est.delta - reference) <= 0.05


def test_newton_not_worse_than_linear_on_average():
    # exact derivatives isolate the estimators from differencing error
    t = analytic_gauss_template((1.0, 0.6), 10.0, 3.0, 45)
    lin_err, newt_err = [], []
    for d in (-0.5, -0.25, 0.0, 0.25, 0.5):
        g = shift_rows(t.f, d)
        est = estimate_jitter(g, t)
        lin_err.append(abs(est.delta_linear - d))
        newt_err.append(abs(est.delta - d))
    assert np.mean(newt_err) <= np.mean(lin_err)
    assert max(newt_err) <= 0.05


def test_newton_rss_not_above_linear_rss_when_accepted():
    t = smooth_template()
    for d in (-0.4, -0.1, 0.2, 0.45):
        g = shift_rows(t.f, d)
        est = estimate_jitter(g, t)
        if est.fallback:
            continue
        rss_linear = float(np.sum((g - aligned_center(t, est.delta_linear)) ** 2))
        assert est.rss_after <= rss_linear + 1e-12


def test_newton_fallback_on_negative_curvature():
    t = smooth_template()
    g = t.f + 50.0 * t.f2  # residual aligned with f2 makes h'' negative
    est = refine_jitter_newton(g, t, 0.0)
    assert est.fallback
    assert est.delta == 0.0


def test_newton_fallback_on_out_of_window_step():
    t = smooth_template()
    g = t.f + 400.0 * t.f1
    lin = estimate_jitter_linear(g, t)
    est = refine_jitter_newton(g, t, lin)
    assert est.fallback
    assert est.delta == lin


def test_newton_rejects_non_finite_start():
    t = smooth_template()
    with pytest.raises(ParameterError):
        refine_jitter_newton(t.f, t, np.nan)


# --- aligned_center ---

def test_aligned_center_at_zero_is_f():
    t = smooth_template()
    assert np.array_equal(aligned_center(t, 0.0), t.f)


def test_aligned_center_linear_in_template():
    t = smooth_template()
    doubled = Template(neuron_id=0, f=2 * t.f, f1=2 * t.f1, f2=2 * t.f2,
                       l1_size=2 * t.l1_size)
    assert np.allclose(aligned_center(doubled, 0.3),
                       2.0 * aligned_center(t, 0.3), atol=1e-12)


def test_aligned_center_cancels_most_of_shift():
    t = smooth_template()
    g = shift_rows(t.f, 0.35)
    est = estimate_jitter(g, t)
    residual = g - aligned_center(t, est.delta)
    raw = g - t.f
    assert np.sum(residual ** 2) < 0.05 * np.sum(raw ** 2)


# --- variance law (small-scale; the full check runs in the acceptance suite) ---

def test_pointwise_std_tracks_derivative():
    rng = np.random.default_rng(20)
    width = 45
    u = np.arange(width) - width // 2
    amp, sigma = 10.0, 3.0
    deltas = rng.uniform(-0.5, 0.5, 4000)
    events = amp * np.exp(-0.5 * ((u[None, :] + deltas[:, None]) / sigma) ** 2)
    std = events.std(axis=0, ddof=1)
    derivative = np.abs(-amp * (u / sigma ** 2) * np.exp(-0.5 * (u / sigma) ** 2))
    sigma_delta = 1.0 / np.sqrt(12.0)
    strong = derivative >= 0.2 * derivative.max()
    rel = np.abs(std[strong] - sigma_delta * derivative[strong]) / (
        sigma_delta * derivative[strong])
    assert np.max(rel) <= 0.15


def test_template_validation():
    rows = gauss_rows([1.0], 10.0, 3.0, 45)
    with pytest.raises(ParameterError):
        Template(neuron_id=0, f=rows, f1=rows[:, :-1], f2=rows, l1_size=1.0)
    with pytest.raises(ParameterError):
        Template(neuron_id=0, f=rows, f1=rows, f2=rows, l1_size=123.0)
