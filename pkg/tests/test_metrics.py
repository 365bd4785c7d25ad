"""Cohort metrics and image error."""

import numpy as np
import pytest

from mncalab.metrics import (
    border_complexity,
    evaluate_cohorts,
    kl_proportions,
    rgba_mse,
    summarize_reports,
    tissue_size,
    type_proportions,
    wasserstein1,
    write_metric_csv,
)
from mncalab.rng import RngStream
from mncalab.tissue import (
    DIFF1,
    INT1,
    STEM,
    TissueCohort,
    custom_params,
    default_params,
    init_grid,
    run_cohort,
)

from oracles import kl_terms, wasserstein_breakpoints


def cohort_from_final(grids):
    """Single-frame cohort wrapper for metric tests."""
    g = np.asarray(grids, dtype=np.uint8)
    return TissueCohort(g[:, None])


class TestKL:
    def test_identical_cohorts_zero(self):
        c = run_cohort(custom_params(grid_size=15, n_steps=5), 4, RngStream(0))
        assert kl_proportions(c, c) == pytest.approx(0.0, abs=1e-6)

    def test_hand_value(self):
        # P = (0.5, 0.5, 0, 0, 0), Q = (0.25, 0.75, 0, 0, 0)
        real = np.zeros((1, 4, 4), dtype=np.uint8)
        real[0, 0, :2] = STEM
        real[0, 1, :2] = INT1
        gen = np.zeros((1, 4, 4), dtype=np.uint8)
        gen[0, 0, 0] = STEM
        gen[0, 1, :3] = INT1
        got = kl_proportions(cohort_from_final(real), cohort_from_final(gen))
        want = 0.5 * np.log(2.0) + 0.5 * np.log(2.0 / 3.0)
        assert got == pytest.approx(want, rel=1e-5)
        assert got == pytest.approx(0.14384, abs=1e-4)

    def test_matches_term_oracle(self):
        r = np.random.default_rng(3)
        for _ in range(20):
            p = r.dirichlet(np.ones(5))
            q = r.dirichlet(np.ones(5))
            qs = (q + 1e-9) / (q + 1e-9).sum()
            # build grids realizing these proportions approximately via counts
            counts_p = np.round(p * 400).astype(int)
            counts_q = np.round(q * 400).astype(int)
            gp = np.zeros((1, 21, 21), dtype=np.uint8)
            gq = np.zeros((1, 21, 21), dtype=np.uint8)
            flat_p, flat_q = gp.reshape(-1), gq.reshape(-1)
            ip = iq = 0
            for t in range(5):
                flat_p[ip : ip + counts_p[t]] = t + 1
                ip += counts_p[t]
                flat_q[iq : iq + counts_q[t]] = t + 1
                iq += counts_q[t]
            got = kl_proportions(cohort_from_final(gp), cohort_from_final(gq))
            pp = type_proportions(gp)
            qq = type_proportions(gq)
            qq = (qq + 1e-9) / (qq + 1e-9).sum()
            assert got == pytest.approx(kl_terms(pp, qq), rel=1e-9)

    def test_absent_generated_type_is_finite(self):
        real = np.zeros((1, 6, 6), dtype=np.uint8)
        real[0, :2] = DIFF1
        gen = np.zeros((1, 6, 6), dtype=np.uint8)
        gen[0, :2] = STEM  # no DIFF1 anywhere
        val = kl_proportions(cohort_from_final(real), cohort_from_final(gen))
        assert np.isfinite(val) and val > 0

    def test_nonnegative(self):
        r = np.random.default_rng(4)
        for i in range(10):
            a = cohort_from_final(r.integers(0, 6, size=(3, 9, 9)).astype(np.uint8))
            b = cohort_from_final(r.integers(0, 6, size=(3, 9, 9)).astype(np.uint8))
            assert kl_proportions(a, b) >= 0


class TestWasserstein:
    def test_identical_zero(self):
        u = [1.0, 2.0, 5.0]
        assert wasserstein1(u, u) == 0.0

    def test_point_masses(self):
        assert wasserstein1([0.0], [1.0]) == pytest.approx(1.0)

    def test_matches_quadratic_oracle(self):
        r = np.random.default_rng(5)
        for _ in range(100):
            u = r.normal(size=r.integers(2, 60))
            v = r.normal(size=r.integers(2, 60)) * r.uniform(0.5, 2)
            assert wasserstein1(u, v) == pytest.approx(wasserstein_breakpoints(u, v), abs=1e-12)

    def test_symmetry_and_triangle(self):
        r = np.random.default_rng(6)
        for _ in range(25):
            a, b, c = (r.normal(size=20) for _ in range(3))
            ab, ba = wasserstein1(a, b), wasserstein1(b, a)
            assert ab == pytest.approx(ba, abs=1e-12)
            assert ab >= 0
            assert ab <= wasserstein1(a, c) + wasserstein1(c, b) + 1e-12

    def test_empty_rejected(self):
        with pytest.raises(ValueError):
            wasserstein1([], [1.0])


class TestSizeAndBorder:
    def test_empty_sizes(self):
        g = np.zeros((5, 5), dtype=np.uint8)
        assert tissue_size(g) == 0
        assert border_complexity(g) == 0

    def test_init_grid_size_is_seed_count(self):
        p = default_params()
        g = init_grid(p, RngStream(0).at(0))
        assert tissue_size(g) == (g != 0).sum()
        assert 5 <= tissue_size(g) <= 15

    def test_full_grid(self):
        g = np.full((35, 35), STEM, dtype=np.uint8)
        assert tissue_size(g) == 1225

    def test_single_cell_border_nine(self):
        g = np.zeros((5, 5), dtype=np.uint8)
        g[2, 2] = STEM
        assert border_complexity(g) == 9

    def test_solid_three_by_three_is_eight(self):
        g = np.full((3, 3), STEM, dtype=np.uint8)
        assert border_complexity(g) == 8

    def test_translation_invariance(self):
        base = np.zeros((12, 12), dtype=np.uint8)
        base[2:5, 2:5] = STEM
        vals = set()
        for dy in range(0, 5):
            for dx in range(0, 5):
                g = np.zeros((12, 12), dtype=np.uint8)
                g[2 + dy : 5 + dy, 2 + dx : 5 + dx] = STEM
                vals.add(border_complexity(g))
        assert len(vals) == 1


class TestRgbaMse:
    def test_identical_zero(self):
        x = np.random.default_rng(0).random((4, 6, 6)).astype(np.float32)
        assert rgba_mse(x, x) == 0.0

    def test_constant_offset(self):
        a = np.full((4, 5, 5), 0.5, dtype=np.float32)
        b = np.zeros((4, 5, 5), dtype=np.float32)
        assert rgba_mse(a, b) == pytest.approx(0.25)

    def test_only_first_four_channels_count(self):
        r = np.random.default_rng(1)
        a = r.random((6, 5, 5)).astype(np.float32)
        b = a.copy()
        b[4:] += 100.0  # hidden channels ignored
        assert rgba_mse(a, b) == 0.0

    def test_matches_loop_oracle(self):
        r = np.random.default_rng(2)
        a = r.random((4, 4, 4))
        b = r.random((4, 4, 4))
        total = 0.0
        for ch in range(4):
            for i in range(4):
                for j in range(4):
                    total += (a[ch, i, j] - b[ch, i, j]) ** 2
        assert rgba_mse(a, b) == pytest.approx(total / 64.0, rel=1e-12)

    def test_shape_mismatch(self):
        with pytest.raises(ValueError):
            rgba_mse(np.zeros((4, 5, 5)), np.zeros((4, 6, 6)))
        with pytest.raises(ValueError):
            rgba_mse(np.zeros((3, 5, 5)), np.zeros((3, 5, 5)))


class TestEvaluateCohorts:
    def test_self_comparison_all_zero(self):
        c = run_cohort(custom_params(grid_size=15, n_steps=6), 5, RngStream(7))
        rep = evaluate_cohorts(c, c)
        assert rep.kl_div == pytest.approx(0.0, abs=1e-6)
        assert rep.size_w == 0.0
        assert rep.border_w == 0.0

    def test_all_nonnegative(self):
        p = custom_params(grid_size=15, n_steps=6)
        a = run_cohort(p, 5, RngStream(8))
        b = run_cohort(p, 5, RngStream(9))
        rep = evaluate_cohorts(a, b)
        assert rep.kl_div >= 0 and rep.size_w >= 0 and rep.border_w >= 0

    def test_normalization_scales_by_area(self):
        p = custom_params(grid_size=15, n_steps=5)
        a = run_cohort(p, 4, RngStream(10))
        b = run_cohort(p, 4, RngStream(11))
        norm = evaluate_cohorts(a, b, normalize=True)
        raw = evaluate_cohorts(a, b, normalize=False)
        assert norm.size_w == pytest.approx(raw.size_w / 225.0, rel=1e-9)
        assert norm.border_w == pytest.approx(raw.border_w / 225.0, rel=1e-9)
        assert norm.kl_div == raw.kl_div

    def test_csv_output(self, tmp_path):
        import csv

        c1 = run_cohort(custom_params(grid_size=11, n_steps=4), 3, RngStream(12))
        c2 = run_cohort(custom_params(grid_size=11, n_steps=4), 3, RngStream(13))
        reports = [evaluate_cohorts(c1, c2), evaluate_cohorts(c1, c2)]
        path = tmp_path / "metrics.csv"
        write_metric_csv(path, [("mnca", reports)])
        with open(path) as f:
            rows = list(csv.reader(f))
        assert rows[0][0] == "model"
        assert rows[1][0] == "mnca"
        s = summarize_reports(reports)
        assert float(rows[1][1]) == pytest.approx(s["kl_div"][0], rel=1e-5)
        assert float(rows[1][2]) == pytest.approx(0.0, abs=1e-12)  # identical repeats
