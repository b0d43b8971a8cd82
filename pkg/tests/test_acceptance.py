"""Acceptance gate: every criterion at its stated tolerance, timed.

Each test prints one PASS/FAIL line; run with -s (or read the captured
output) for the summary.
"""

import contextlib
import time

import numpy as np
import pytest
from mpmath import mp, mpf
from scipy.special import expit

from conftest import FD_ATOL, fd_gradient
from contactforge.cli import dispatch
from contactforge.dataset import (
    ContactSample,
    SyntheticConfig,
    compute_statistics,
    generate_synthetic,
    save_manifest,
)
from contactforge.labeling import (
    TriangleBVH,
    brute_force_surface_distance,
    closest_point_on_triangle,
)
from contactforge.losses import (
    ClassBalanceConfig,
    LossWeights,
    bce,
    cb_loss,
    cb_weight,
    focal_loss,
    regularization_loss,
    smoothness_loss,
    total_loss,
    vcb_loss,
)
from contactforge.mesh import MeshTopology, build_level_regressors, build_topology
from contactforge.sampling import (
    build_plan,
    compute_bin_edges,
    contact_balance_score,
)
from contactforge.training import Variant, evaluate, run_ablation
from test_labeling import grid_search_distance, grid_search_distances
from test_losses import complete3_topology, smooth_kink_free_coords, two_vertex_edge_topology


@contextlib.contextmanager
def criterion(number, name):
    try:
        yield
    except BaseException:
        print(f"[criterion {number}] {name}: FAIL")
        raise
    print(f"[criterion {number}] {name}: PASS")


# ---------------------------------------------------------------------------
# 1. Gradient suite
# ---------------------------------------------------------------------------


def _check_instance(value_fn, grad, z, rtol, coords):
    fd = fd_gradient(value_fn, z, coords=coords)
    for i, g_fd in fd.items():
        tol = rtol * max(abs(grad[i]), abs(g_fd)) + FD_ATOL
        assert abs(grad[i] - g_fd) <= tol, (
            f"coord {i}: analytic {grad[i]!r} vs fd {g_fd!r}"
        )


def test_criterion_1_gradient_suite(topo162, regressors162):
    with criterion(1, "gradient suite, 100 instances per loss"):
        start = time.perf_counter()
        rng = np.random.default_rng(2024)
        v = 162
        n_instances = 100
        subset = 36  # random coordinate subset per instance for the O(V) sweep

        for inst in range(n_instances):
            z = rng.normal(size=v) * rng.uniform(1.0, 6.0)
            y = (rng.random(v) < rng.uniform(0.05, 0.5)).astype(np.float64)
            mean = rng.random(v)
            counts = np.stack(
                [rng.integers(1, 4000, v), rng.integers(1, 400, v)], axis=1
            ).astype(float)
            cfg_v = ClassBalanceConfig.from_vertex_counts(counts, beta=0.9999)
            cfg_g = ClassBalanceConfig.from_global(
                float(counts[:, 0].sum()), float(counts[:, 1].sum()), 0.9999
            )
            coords = rng.choice(v, size=subset, replace=False)

            _, g = bce(z, y)
            _check_instance(lambda zz: bce(zz, y)[0], g, z, 1e-5, coords)

            _, g = focal_loss(z, y, 2.0)
            _check_instance(lambda zz: focal_loss(zz, y, 2.0)[0], g, z, 1e-5, coords)

            _, g = cb_loss(z, y, cfg_g)
            _check_instance(lambda zz: cb_loss(zz, y, cfg_g)[0], g, z, 1e-5, coords)

            _, g = vcb_loss(z, y, cfg_v)
            _check_instance(lambda zz: vcb_loss(zz, y, cfg_v)[0], g, z, 1e-5, coords)

            p = expit(z)
            reg_coords = [i for i in coords if abs(p[i] - mean[i]) > 1e-3]
            _, g = regularization_loss(z, mean)
            _check_instance(
                lambda zz: regularization_loss(zz, mean)[0], g, z, 1e-5, reg_coords
            )

            smooth_ok = set(smooth_kink_free_coords(z, topo162))
            smooth_coords = [i for i in coords if i in smooth_ok]
            _, g = smoothness_loss(z, topo162)
            _check_instance(
                lambda zz: smoothness_loss(zz, topo162)[0], g, z, 1e-4, smooth_coords
            )

            report = total_loss(z, y, topo162, mean, regressors162, cfg_v)
            total_coords = [i for i in reg_coords if i in smooth_ok]
            _check_instance(
                lambda zz: total_loss(
                    zz, y, topo162, mean, regressors162, cfg_v
                ).total,
                report.gradient,
                z,
                1e-4,
                total_coords,
            )

        elapsed = time.perf_counter() - start
        assert elapsed < 30.0, f"gradient suite took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 2. Closest-point oracle
# ---------------------------------------------------------------------------


def test_criterion_2_closest_point_and_bvh():
    with criterion(2, "closest-point grid oracle and BVH vs brute force"):
        start = time.perf_counter()
        rng = np.random.default_rng(7)

        n_pairs = 10_000
        tris = rng.random((n_pairs, 3, 3))
        points = rng.random((n_pairs, 3)) * 1.5 - 0.25
        dists = np.empty(n_pairs)
        for i in range(n_pairs):
            _, dists[i] = closest_point_on_triangle(
                points[i], tris[i, 0], tris[i, 1], tris[i, 2]
            )
        oracle = grid_search_distances(points, tris[:, 0], tris[:, 1], tris[:, 2])
        gaps = oracle - dists
        assert gaps.min() >= -1e-9
        assert np.abs(gaps).max() <= 1e-4

        for _ in range(100):
            # spatially local triangles, as in scanned meshes; a handful of
            # slivers and duplicates keep the degenerate paths exercised
            n_tris = int(rng.integers(1, 501))
            centers = rng.random((n_tris, 3))
            offsets = rng.normal(scale=0.06, size=(n_tris, 2, 3))
            corners = np.concatenate(
                [centers[:, None, :], centers[:, None, :] + offsets], axis=1
            )
            verts = corners.reshape(-1, 3)
            tris = np.arange(3 * n_tris).reshape(-1, 3)
            if n_tris >= 4:
                tris[1] = tris[0]  # duplicate geometry: tie-break coverage
                verts[tris[2]] = verts[tris[2][0]]  # fully collapsed sliver
            bvh = TriangleBVH(verts, tris)
            for _ in range(25):
                p = rng.random(3) * 2 - 0.5
                d_bvh, i_bvh = bvh.query(p)
                d_bf, i_bf = brute_force_surface_distance(p, verts, tris)
                assert abs(d_bvh - d_bf) <= 1e-9
                assert i_bvh == i_bf

        elapsed = time.perf_counter() - start
        assert elapsed < 60.0, f"closest-point suite took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 3. Bin-edge fixture
# ---------------------------------------------------------------------------


def test_criterion_3_edge_fixture():
    with criterion(3, "log-spaced bin edge fixture and curvature limit"):
        # 50-digit evaluation of the edge formula (K=4, curvature=5, [0,1])
        oracle = (0.0, 0.45258877106216965, 0.69918032526713763,
                  0.86961706903524023, 1.0)
        edges = compute_bin_edges(0.0, 1.0, 4, 5.0)
        assert np.abs(edges - np.array(oracle)).max() <= 1e-5
        uniform = compute_bin_edges(0.0, 1.0, 4, 1e-9)
        assert np.abs(uniform - np.arange(5) / 4).max() <= 1e-6


# ---------------------------------------------------------------------------
# 4. BCS properties
# ---------------------------------------------------------------------------


def test_criterion_4_bcs_properties():
    with criterion(4, "bin partition, quota balance, plan determinism"):
        rng = np.random.default_rng(99)
        for trial in range(1000):
            n = int(rng.integers(8, 120))
            scores = rng.normal(size=n) * rng.uniform(0.01, 1.0)
            k = int(rng.integers(2, 12))
            total = int(rng.integers(k, 3 * n))
            seed = int(rng.integers(0, 2**31))
            plan = build_plan(scores, k=k, total=total, seed=seed)

            seen = np.sort(np.concatenate(plan.bins))
            assert np.array_equal(seen, np.arange(n))

            bin_of = np.empty(n, dtype=int)
            for b, members in enumerate(plan.bins):
                bin_of[members] = b
            counts = np.bincount(bin_of[plan.resampled], minlength=plan.bin_count)
            drawn = counts[[i for i, m in enumerate(plan.bins) if len(m)]]
            assert drawn.max() - drawn.min() <= 1

            if trial % 50 == 0:
                again = build_plan(scores, k=k, total=total, seed=seed)
                assert plan.resampled.tobytes() == again.resampled.tobytes()
                assert plan.edges.tobytes() == again.edges.tobytes()


# ---------------------------------------------------------------------------
# 5. Score and weight fixtures
# ---------------------------------------------------------------------------


def test_criterion_5_score_and_weight_fixtures():
    with criterion(5, "balance-score and effective-number fixtures"):
        rng = np.random.default_rng(5)
        assert contact_balance_score(np.zeros(30), rng.random(30)) == 0.0
        c = rng.integers(0, 2, size=30).astype(float)
        assert contact_balance_score(c, np.full(30, 0.5)) == pytest.approx(0.0, abs=1e-15)

        alpha = cb_weight(100, 0.99)
        assert abs(alpha - 0.0157744) < 1e-6
        assert alpha == pytest.approx(0.015773675300865494, abs=1e-12)
        for beta in (0.5, 0.9, 0.9999):
            assert cb_weight(1, beta) == 1.0

        # strict monotonicity: exact for the formula, checked with precision
        # scaled to resolve 1 - beta^n at n = 1e5; float64 weights plateau
        # once beta^n is unrepresentably close to 1
        ns = np.unique(np.geomspace(1, 100_000, 200).astype(np.int64))
        for beta in (0.9, 0.99, 0.9999):
            import math

            mp.dps = int(math.ceil(100_000 * -math.log10(beta))) + 30
            beta_mp = mpf(str(beta))
            exact = [(1 - beta_mp) / (1 - beta_mp**int(n)) for n in ns]
            assert all(a > b for a, b in zip(exact, exact[1:]))
            alphas = cb_weight(ns, beta)
            diffs = np.diff(alphas)
            assert (diffs <= 0).all()
            representable = np.power(beta, ns[:-1].astype(float)) > 1e-12
            assert (diffs[representable] < 0).all()


# ---------------------------------------------------------------------------
# 6. Smoothness fixtures
# ---------------------------------------------------------------------------


def test_criterion_6_smoothness_fixtures():
    with criterion(6, "smoothness loss closed-form fixtures"):
        edge_topo = two_vertex_edge_topology()
        value, _ = smoothness_loss(np.array([1.3, 1.3]), edge_topo)
        assert abs(value) <= 1e-12

        tri_topo = complete3_topology()
        value, _ = smoothness_loss(np.zeros(3), tri_topo)
        assert abs(value - np.log(1.5)) <= 1e-9


# ---------------------------------------------------------------------------
# 7. Directional ablations
# ---------------------------------------------------------------------------


def test_criterion_7_directional_ablations(topo162, regressors162):
    with criterion(7, "ordering ablations on the synthetic benchmark"):
        start = time.perf_counter()
        variants = (
            Variant("vcb_on", "vcb", True, "learned"),
            Variant("bce_on", "bce", True, "learned"),
            Variant("vcb_off", "vcb", False, "learned"),
            Variant("vcb_zero", "vcb", True, "zero"),
        )
        acc = {v.name: [] for v in variants}
        for seed in (1, 2, 3):
            dataset = generate_synthetic(SyntheticConfig(
                subdivisions=2, n_samples=2000, feature_dim=16,
                empty_fraction=0.7, tip_boost=10.0, seed=seed,
            ))
            rows = run_ablation(
                dataset, topo162, regressors162, variants=variants,
                seeds=(seed,), steps=2000,
            )
            for r in rows:
                if r["seed"] == seed:
                    acc[r["variant"]].append((r["recall"], r["f1"]))

        mean = {k: np.mean(v, axis=0) for k, v in acc.items()}
        vcb_r, vcb_f1 = mean["vcb_on"]
        bce_r, bce_f1 = mean["bce_on"]
        off_r, _ = mean["vcb_off"]
        _, zero_f1 = mean["vcb_zero"]

        assert vcb_r > bce_r, f"recall ordering: vcb {vcb_r:.3f} vs bce {bce_r:.3f}"
        assert vcb_f1 > bce_f1, f"F1 ordering: vcb {vcb_f1:.3f} vs bce {bce_f1:.3f}"
        assert vcb_r > off_r, f"sampling ordering: on {vcb_r:.3f} vs off {off_r:.3f}"
        assert vcb_f1 >= zero_f1, f"init ordering: learned {vcb_f1:.3f} vs zero {zero_f1:.3f}"

        elapsed = time.perf_counter() - start
        assert elapsed < 300.0, f"ablations took {elapsed:.1f}s"


# ---------------------------------------------------------------------------
# 8. Protocol conformance
# ---------------------------------------------------------------------------


def test_criterion_8_protocol_conformance():
    with criterion(8, "skip rule and VCB/CB degenerate equivalence"):
        rng = np.random.default_rng(88)
        pred = rng.integers(0, 2, size=(50, 12))
        gt = rng.integers(0, 2, size=(50, 12))
        gt[rng.choice(50, size=17, replace=False)] = 0
        report = evaluate(pred, gt)
        zero_rows = int((gt.sum(axis=1) == 0).sum())
        assert report.skipped_count == zero_rows
        assert report.evaluated_count + report.skipped_count == 50

        for _ in range(100):
            v = int(rng.integers(2, 200))
            z = rng.normal(size=v) * 3
            y = (rng.random(v) < 0.3).astype(np.float64)
            n0, n1 = (int(x) for x in rng.integers(1, 100_000, size=2))
            beta = float(rng.uniform(0.5, 0.99999))
            cfg_v = ClassBalanceConfig.from_vertex_counts(
                np.tile([n0, n1], (v, 1)), beta=beta
            )
            cfg_g = ClassBalanceConfig.from_global(n0, n1, beta=beta)
            vv, gv = vcb_loss(z, y, cfg_v)
            vc, gc = cb_loss(z, y, cfg_g)
            assert abs(vv - vc) < 1e-12
            assert np.abs(gv - gc).max() < 1e-12


# ---------------------------------------------------------------------------
# 9. End-to-end determinism
# ---------------------------------------------------------------------------


def test_criterion_9_ablate_byte_identical(tmp_path, bench_small):
    with criterion(9, "ablate CLI byte-identical across reruns"):
        manifest = tmp_path / "bench.txt"
        save_manifest(bench_small, str(manifest))
        args = ["ablate", "--manifest", str(manifest), "--steps", "120",
                "--seeds", "3", "--lr", "500"]
        out_a, out_b = tmp_path / "a.csv", tmp_path / "b.csv"
        assert dispatch(args + ["--out", str(out_a)]) == 0
        assert dispatch(args + ["--out", str(out_b)]) == 0
        assert out_a.read_bytes() == out_b.read_bytes()
