"""Acceptance criteria, one test per criterion, each recording a PASS/FAIL line.

Run alone with ``pytest tests/test_acceptance.py -v``; the lines are printed
in the "acceptance criteria" section of the terminal summary.
"""

import math
import time

import numpy as np
import pytest

from conftest import random_distribution, record_criterion
from mkflow.classify import LabeledDataset, Metric, default_workers, distance_matrix, evaluate, kappa_sweep
from mkflow.cli import bench_pair
from mkflow.distributions import GroundCost, QuantizedDistribution, quantize_jointly, total_mass
from mkflow.flow import solve_min_cost_flow
from mkflow.imaging import GrayImage, bicubic_weights, downsample_bicubic, load_pgm, save_pgm
from mkflow.oracle import compare_random, random_pair
from mkflow.synth import SynthSpec, generate
from mkflow.transport import (
    balanced_distance,
    build_transport_network,
    unbalanced_distance,
    unbalanced_transport_quantized,
)

# synthetic benchmark sweep: small and large extremes bracket the useful range
SWEEP_KAPPAS = (0.25, 1.0, 4.0, 16.0, 64.0)
SWEEP_REPEATS = 50
SWEEP_SEED = 2024
SWEEP_BUDGET_S = 30 * 60


def test_criterion_1_oracle_equivalence():
    t0 = time.perf_counter()
    records = compare_random(trials=200, max_size=4, seed=1, resolution=10**4, kappas=(0.25, 1.0, 4.0))
    elapsed = time.perf_counter() - t0
    matched = sum(r.matched for r in records)
    worst = max(abs(r.flow_value - r.lp_value) / max(abs(r.lp_value), 1e-300) for r in records)
    passed = matched == 200 and elapsed < 60
    record_criterion(1, "oracle equivalence", passed,
                     f"{matched}/200 matched, worst rel diff {worst:.1e}, {elapsed:.1f}s")
    assert passed


def test_criterion_2_pruning_invariance():
    rng = np.random.default_rng(2)
    mismatches = 0
    layout_mismatches = 0
    trials = 150
    for t in range(trials):
        f0, f1 = random_pair(rng, max_size=5)
        q0, q1 = quantize_jointly(f0, f1, 10**4)
        kappa = float(rng.choice([0.1, 0.5, 0.75, 1.0, 1.5, 2.0, 3.0]))
        p = float(rng.choice([0.5, 1.0, 2.0]))
        c = GroundCost.on(f0.grid, p)
        values = []
        for prune, bidirectional in ((True, False), (False, False), (True, True), (False, True)):
            tn = build_transport_network(q0, q1, c, kappa, prune=prune, bidirectional_aux=bidirectional)
            values.append(solve_min_cost_flow(tn.network).objective)
        scale = max(1.0, abs(values[1]))
        mismatches += abs(values[0] - values[1]) > 1e-12 * scale
        layout_mismatches += max(abs(v - values[0]) for v in values[2:]) > 1e-12 * scale
    passed = mismatches == 0 and layout_mismatches == 0
    record_criterion(2, "pruning invariance", passed,
                     f"{trials} instances: {mismatches} prune mismatches, "
                     f"{layout_mismatches} aux-layout mismatches")
    assert passed


def _delta(grid, index, amount=1.0):
    from mkflow.distributions import MassDistribution
    return MassDistribution.delta(grid, index, amount)


def test_criterion_3_analytic_fixtures():
    from mkflow.distributions import Grid, MassDistribution
    rng = np.random.default_rng(3)
    failures = []
    g = Grid(8, 8)
    c = GroundCost.on(g)
    f = random_distribution(rng, 8, 8)
    if unbalanced_distance(f, f, c, 1.0).value != 0:
        failures.append("self-distance")
    zero = MassDistribution(g, np.zeros(g.size))
    r = unbalanced_distance(f, zero, c, 1.5)
    if abs(r.value - 1.5 * total_mass(f)) > r.stats.quantization_error_bound:
        failures.append("empty target")
    a, b = _delta(g, 0, 0.8), _delta(g, 4 * 8 + 3, 0.8)  # d = 5
    for kappa in (2.0, 3.0):
        r = unbalanced_distance(a, b, c, kappa)
        if not math.isclose(r.value, min(5.0, 2 * kappa) * 0.8, rel_tol=1e-12):
            failures.append(f"two-delta kappa={kappa}")
    f0, f1 = random_distribution(rng, 8, 8), random_distribution(rng, 8, 8, scale=1.7)
    q0, q1 = quantize_jointly(f0, f1, 10**4)
    base = unbalanced_transport_quantized(q0, q1, c, 1.0).value
    for alpha in (2, 3):
        s0 = QuantizedDistribution(g, q0.units * alpha, q0.unit_size)
        s1 = QuantizedDistribution(g, q1.units * alpha, q1.unit_size)
        if not math.isclose(unbalanced_transport_quantized(s0, s1, c, 1.0).value, alpha * base, rel_tol=1e-12):
            failures.append(f"scaling alpha={alpha}")
    f1 = f1.scaled(total_mass(f0) / total_mass(f1))
    kappa = c.max_cost() / 2 + 0.5
    sat = unbalanced_distance(f0, f1, c, kappa, 10**5)
    bal = balanced_distance(f0, f1, c, 10**5)
    if abs(sat.value - bal.value) > sat.stats.quantization_error_bound:
        failures.append("saturation")
    passed = not failures
    record_criterion(3, "analytic fixtures", passed, "all exact" if passed else f"failed: {failures}")
    assert passed


def test_criterion_4_metric_properties():
    rng = np.random.default_rng(4)
    asym = 0
    for _ in range(100):
        f0, f1 = random_distribution(rng, 5, 5), random_distribution(rng, 5, 5, scale=2.0)
        c = GroundCost.on(f0.grid)
        kappa = float(rng.choice([0.5, 1.0, 4.0]))
        a, b = unbalanced_distance(f0, f1, c, kappa), unbalanced_distance(f1, f0, c, kappa)
        asym += abs(a.value - b.value) > max(a.stats.quantization_error_bound, 1e-12)
    triangle = 0
    for _ in range(100):
        fs = [random_distribution(rng, 5, 5) for _ in range(3)]
        fs = [f.scaled(1.0 / total_mass(f)) for f in fs]
        c = GroundCost.on(fs[0].grid)
        d = [unbalanced_distance(x, y, c, 2.0) for x, y in ((fs[0], fs[1]), (fs[1], fs[2]), (fs[0], fs[2]))]
        slack = d[0].stats.quantization_error_bound + d[1].stats.quantization_error_bound
        triangle += d[2].value > d[0].value + d[1].value + slack
    passed = asym == 0 and triangle == 0
    record_criterion(4, "metric properties", passed,
                     f"symmetry failures {asym}/100, triangle failures {triangle}/100")
    assert passed


@pytest.fixture(scope="module")
def synthetic_sweep():
    data = generate(SynthSpec(classes=3, per_class=60, width=29, height=24, jitter_px=2.0,
                              noise_sigma=0.05, seed=0))
    t0 = time.perf_counter()
    rows = kappa_sweep(data, SWEEP_KAPPAS, p=1.0, train_fraction=1 / 3, repeats=SWEEP_REPEATS,
                       seed=SWEEP_SEED, workers=default_workers())
    return rows, time.perf_counter() - t0


@pytest.mark.slow
def test_criterion_5_synthetic_benchmark(synthetic_sweep):
    rows, elapsed = synthetic_sweep
    mk = [r for r in rows if r.kappa is not None]
    l2 = next(r for r in rows if r.kappa is None)
    errors = [r.mean_error for r in mk]
    best = min(errors)
    inner = min(errors[1:-1])
    beats_l2 = best < l2.mean_error
    u_shape = inner < errors[0] and inner < errors[-1]
    passed = beats_l2 and u_shape and elapsed < SWEEP_BUDGET_S
    curve = ", ".join(f"{r.kappa:g}:{r.mean_error:.4f}" for r in mk)
    record_criterion(5, "synthetic benchmark", passed,
                     f"mk errors by kappa [{curve}], l2 {l2.mean_error:.4f}, "
                     f"{elapsed / 60:.1f} min with {default_workers()} worker(s)")
    assert beats_l2, "best mk error is not below l2"
    assert u_shape, "error curve is not lower at intermediate kappa than at both extremes"
    assert elapsed < SWEEP_BUDGET_S


def test_criterion_6_timing_trend():
    kappas = [1.0, 4.0, 16.0, 32.0]
    rows = bench_pair((29, 24), kappas, resolution=10**6, seed=0, repeat=5)
    t = {r["kappa"]: r["seconds"] for r in rows}
    edges = [r["edges_after_prune"] for r in rows]
    increasing = all(a < b for a, b in zip(edges, edges[1:]))
    passed = t[1.0] <= 1.0 and t[1.0] < t[32.0] and increasing
    record_criterion(6, "timing trend", passed,
                     f"kappa=1 {t[1.0] * 1e3:.1f} ms, kappa=32 {t[32.0] * 1e3:.1f} ms, edges {edges}")
    assert passed


def test_criterion_7_determinism():
    data = generate(SynthSpec(per_class=6, seed=7))
    metric = Metric("mk", 2.0)
    one = distance_matrix(data, metric, workers=1)
    several = distance_matrix(data, metric, workers=3)
    same_matrix = np.array_equal(one.values, several.values)
    labels = np.array(data.labels)
    r1 = evaluate(one, labels, repeats=200, seed=9)
    r2 = evaluate(several, labels, repeats=200, seed=9)
    same_report = np.array_equal(r1.per_repeat_error, r2.per_repeat_error) and r1.summary() == r2.summary()
    passed = same_matrix and same_report
    record_criterion(7, "determinism", passed,
                     f"matrices identical across 1/3 workers: {same_matrix}; reports identical: {same_report}")
    assert passed


def test_criterion_8_imaging(tmp_path):
    rng = np.random.default_rng(8)
    worst_unity = 0.0
    for _ in range(50):
        n_in, n_out = (int(v) for v in rng.integers(1, 120, size=2))
        worst_unity = max(worst_unity, float(np.max(np.abs(bicubic_weights(n_in, n_out).sum(axis=1) - 1))))
    const_ok = True
    for value in (0.0, 0.3, 1.0):
        out = downsample_bicubic(GrayImage(58, 48, np.full((48, 58), value)), 29, 24)
        const_ok &= bool(np.allclose(out.intensities, value, atol=1e-12))
    img = GrayImage.from_array(rng.uniform(size=(48, 58)))
    identity_ok = np.array_equal(downsample_bicubic(img, 58, 48).intensities, img.intensities)
    save_pgm(img, tmp_path / "img.pgm")
    round_trip = float(np.max(np.abs(load_pgm(tmp_path / "img.pgm").intensities - img.intensities)))
    passed = worst_unity <= 1e-12 and const_ok and identity_ok and round_trip <= 1 / 510 + 1e-12
    record_criterion(8, "imaging", passed,
                     f"partition-of-unity max dev {worst_unity:.1e}, constant {const_ok}, "
                     f"identity {identity_ok}, PGM round trip {round_trip:.5f} <= {1 / 510:.5f}")
    assert passed
