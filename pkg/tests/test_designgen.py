"""LM core behavior, surface fitting oracles, and database generation."""

import json
import math

import numpy as np
import pytest

from lumenforge import optics as op
from lumenforge import shsurface as sh
from lumenforge.designgen import (
    DesignOptions,
    DivergenceError,
    GridPlan,
    LMOptions,
    RandomPlan,
    design_surface,
    fit_surface,
    generate_database,
    init_surface,
    levenberg_marquardt,
    plan_targets,
    read_database,
    warm_start_parents,
)
from lumenforge.designgen.database import DesignRecord, target_to_dict
from lumenforge.designgen.fit import _FitKernel, fit_ray_set


FAST_B = DesignOptions(feedback_relax=(0.9, 0.7, 0.5), feedback_rays=300_000,
                       eval_rays=300_000)


class TestLMCore:
    def test_solves_linear_least_squares_exactly(self):
        rng = np.random.default_rng(0)
        a = rng.normal(size=(30, 5))
        b = rng.normal(size=30)
        expected, *_ = np.linalg.lstsq(a, b, rcond=None)
        result = levenberg_marquardt(lambda x: a @ x - b, np.zeros(5),
                                     fd_steps=1e-6, max_iter=50)
        assert np.abs(result.x - expected).max() < 1e-8

    def test_rosenbrock_valley(self):
        def residual(x):
            return np.array([10.0 * (x[1] - x[0] ** 2), 1.0 - x[0]])

        result = levenberg_marquardt(residual, np.array([-1.2, 1.0]),
                                     fd_steps=1e-7, max_iter=200, rms_tol=1e-10)
        assert np.abs(result.x - 1.0).max() < 1e-6

    def test_accepted_steps_never_increase_objective(self):
        rng = np.random.default_rng(1)
        a = rng.normal(size=(20, 4))
        b = rng.normal(size=20)

        def residual(x):
            return np.tanh(a @ x) - b

        result = levenberg_marquardt(residual, np.zeros(4), fd_steps=1e-6,
                                     max_iter=60)
        hist = result.objective_history
        assert all(h2 <= h1 + 1e-15 for h1, h2 in zip(hist, hist[1:]))

    def test_max_iter_zero_returns_start(self):
        x0 = np.array([1.0, 2.0])
        result = levenberg_marquardt(lambda x: x, x0, fd_steps=1e-6, max_iter=0)
        assert np.array_equal(result.x, x0)
        assert result.iterations == 0

    def test_divergence_requires_no_accepted_step(self):
        # residual that rejects every trial: constant objective, solve gives
        # delta=0 steps that never strictly improve -> lambda climbs to cap
        def residual(x):
            return np.array([1.0])

        with pytest.raises(DivergenceError):
            levenberg_marquardt(residual, np.array([0.0]), fd_steps=1e-6,
                                max_iter=10, lambda_cap=1e4)


class TestFitSurface:
    def test_zero_iterations_returns_init(self):
        scenario = op.Scenario.lens()
        init = init_surface(scenario)
        opts = LMOptions(max_iter=0)
        result = fit_surface(scenario, op.RectTarget(3000.0, 3000.0, 1200.0),
                             init, opts)
        assert np.array_equal(result.surface.coeffs.values, init.coeffs.values)
        assert result.iterations == 0

    def test_init_surface_contracts(self):
        reflector = init_surface(op.Scenario.reflector())
        r, _, _ = sh.eval_surface(reflector, 0.5, 1.0)
        assert r == pytest.approx(50.0, abs=1e-12)
        assert reflector.coeffs.mask is None
        assert reflector.tilt_alpha == 0.0

        lens = init_surface(op.Scenario.lens())
        r, _, _ = sh.eval_surface(lens, 0.5, 1.0)
        assert r == pytest.approx(25.0, abs=1e-12)
        assert lens.coeffs.mask is not None and lens.coeffs.mask.size == 36
        sh.validate_surface(lens, op.Scenario.lens().cone_half_angle)

    def test_known_answer_single_coefficient_recovery(self):
        # synthetic inverse problem: hits generated by a surface with one
        # perturbed coefficient must be matched by fitting that coefficient
        scenario = op.Scenario.lens()
        opts = LMOptions()
        directions, _ = fit_ray_set(scenario, opts)
        kernel = _FitKernel(scenario, directions, 1200.0)
        init = init_surface(scenario)
        truth = init.coeffs.values.copy()
        c10_pos = sh.flat_index(1, 0)
        truth[c10_pos] += 1.7
        target_hits = kernel.hits(truth, 0.0, 0.0)

        def residual(x):
            values = init.coeffs.values.copy()
            values[c10_pos] += x[0]
            return (kernel.hits(values, 0.0, 0.0) - target_hits).ravel()

        result = levenberg_marquardt(residual, np.array([0.0]), fd_steps=1e-4,
                                     max_iter=50, rms_tol=1e-10,
                                     invalid=(sh.InvalidSurfaceError,))
        assert result.x[0] == pytest.approx(1.7, abs=1e-6)

    def test_lens_fit_meets_quality_bar(self):
        scenario = op.Scenario.lens()
        target = op.RectTarget(3000.0, 3000.0, 1200.0)
        result = design_surface(scenario, target, opts=FAST_B, seed=5)
        assert result.rms_mm < 5.0 * 20  # coarse envelope; quality is the trace
        assert result.nonuniformity_pct <= 10.0
        sh.validate_surface(result.surface, scenario.cone_half_angle)

    def test_square_target_xy_symmetric_coefficients(self):
        # W = H with the quadrant mask: x<->y-antisymmetric energy stays tiny
        scenario = op.Scenario.lens()
        target = op.RectTarget(3000.0, 3000.0, 1200.0)
        result = design_surface(scenario, target, opts=FAST_B, seed=5)
        values = result.surface.coeffs.values
        total = 0.0
        anti = 0.0
        for l in range(11):
            for m in range(0, l + 1, 2):
                c = values[sh.flat_index(l, m)]
                total += c * c
                # swap x<->y maps cos(m phi) -> cos(m(pi/2 - phi)) = (-1)^(m/2) cos(m phi)
                if m % 4 == 2:
                    anti += c * c
        assert total > 0.0
        assert anti / total < 1e-3

    def test_warm_start_consistency(self):
        scenario = op.Scenario.lens()
        target = op.RectTarget(2800.0, 3200.0, 1250.0)
        cold = design_surface(scenario, target, opts=FAST_B, seed=9)
        neighbor = design_surface(scenario, op.RectTarget(3000.0, 3000.0, 1200.0),
                                  opts=FAST_B, seed=5)
        warm = design_surface(scenario, target, init=neighbor.surface,
                              init_square=neighbor.square_coords,
                              opts=FAST_B, seed=9)
        assert abs(warm.nonuniformity_pct - cold.nonuniformity_pct) < 2.0


class TestPlansAndDatabase:
    def test_random_plan_inside_training_box(self):
        scenario = op.Scenario.reflector()
        targets = plan_targets(scenario, RandomPlan(100), seed=7)
        assert len(targets) == 100
        xs = np.array([t.x_off for t in targets])
        ys = np.array([t.y_off for t in targets])
        assert xs.min() >= 0.0 and xs.max() <= 500.0
        assert ys.min() >= 0.0 and ys.max() <= 500.0
        # deterministic under the same seed
        again = plan_targets(scenario, RandomPlan(100), seed=7)
        assert targets == again
        assert plan_targets(scenario, RandomPlan(100), seed=8) != targets

    def test_grid_plan_layout(self):
        scenario = op.Scenario.lens()
        targets = plan_targets(scenario, GridPlan(5, 5, 4), seed=0)
        assert len(targets) == 100
        widths = sorted({t.width for t in targets})
        heights = sorted({t.height for t in targets})
        distances = sorted({t.distance for t in targets})
        assert widths == [2000.0, 2500.0, 3000.0, 3500.0, 4000.0]
        assert heights == widths
        assert distances == [1000.0, 1000.0 + 500.0 / 3.0, 1000.0 + 1000.0 / 3.0, 1500.0]

    def test_single_point_axis_uses_midpoint(self):
        scenario = op.Scenario.lens()
        targets = plan_targets(scenario, GridPlan(1, 1, 1), seed=0)
        assert targets == [op.RectTarget(3000.0, 3000.0, 1250.0)]

    def test_empty_plan(self):
        scenario = op.Scenario.reflector()
        assert plan_targets(scenario, RandomPlan(0), seed=1) == []

    def test_warm_start_parents_form_tree(self):
        scenario = op.Scenario.lens()
        targets = plan_targets(scenario, GridPlan(3, 3, 2), seed=0)
        parents = warm_start_parents(scenario, targets)
        assert parents[0] == -1
        assert all(0 <= p < i for i, p in enumerate(parents) if i > 0)

    def test_record_json_round_trip(self):
        surface = sh.constant_surface(10, 25.0, mask=sh.quadrant_mask(10))
        rec = DesignRecord(scenario="lens_rect",
                           target=op.RectTarget(3000.0, 2500.0, 1200.0),
                           surface=surface, nonuniformity_pct=4.25,
                           spill_fraction=0.01, iterations=12, rms_mm=61.5, seed=99)
        parsed = DesignRecord.from_dict(json.loads(rec.to_json_line()))
        assert parsed.target == rec.target
        assert parsed.nonuniformity_pct == rec.nonuniformity_pct
        assert np.array_equal(parsed.surface.coeffs.values, surface.coeffs.values)
        assert parsed.seed == 99

    def test_error_record_round_trip(self):
        rec = DesignRecord(scenario="lens_rect",
                           target=op.RectTarget(1.0, 2.0, 3.0), surface=None,
                           nonuniformity_pct=float("nan"),
                           spill_fraction=float("nan"), iterations=0,
                           rms_mm=float("nan"), seed=0, error="boom")
        parsed = DesignRecord.from_dict(json.loads(rec.to_json_line()))
        assert parsed.error == "boom"
        assert parsed.surface is None

    def test_generate_database_small_grid(self, tmp_path):
        scenario = op.Scenario.lens()
        out = tmp_path / "db.jsonl"
        records = generate_database(scenario, GridPlan(2, 2, 1), seed=3, out_path=out,
                                    opts=FAST_B)
        assert len(records) == 4
        assert all(r.error is None for r in records)
        on_disk = read_database(out, scenario_kind="lens_rect")
        assert [target_to_dict(r.target) for r in on_disk] == \
            [target_to_dict(r.target) for r in records]
        assert all(r.nonuniformity_pct < 25.0 for r in records)

    def test_generate_database_resume_skips_done(self, tmp_path):
        scenario = op.Scenario.lens()
        out = tmp_path / "db.jsonl"
        first = generate_database(scenario, GridPlan(2, 1, 1), seed=3, out_path=out,
                                  opts=FAST_B)
        before = out.read_text()
        calls = []
        second = generate_database(scenario, GridPlan(2, 1, 1), seed=3, out_path=out,
                                   opts=FAST_B,
                                   progress=lambda i, rec: calls.append(i))
        assert calls == []  # nothing recomputed
        assert out.read_text() == before
        assert [r.to_json_line() for r in second] == [r.to_json_line() for r in first]

    def test_mixed_scenario_database_rejected(self, tmp_path):
        out = tmp_path / "db.jsonl"
        surface_a = sh.constant_surface(10, 50.0)
        surface_b = sh.constant_surface(10, 25.0, mask=sh.quadrant_mask(10))
        rec_a = DesignRecord(scenario="reflector_offset",
                             target=op.OffsetTarget(0.0, 0.0), surface=surface_a,
                             nonuniformity_pct=5.0, spill_fraction=0.0,
                             iterations=1, rms_mm=1.0, seed=0)
        rec_b = DesignRecord(scenario="lens_rect",
                             target=op.RectTarget(3000.0, 3000.0, 1200.0),
                             surface=surface_b, nonuniformity_pct=5.0,
                             spill_fraction=0.0, iterations=1, rms_mm=1.0, seed=0)
        out.write_text(rec_a.to_json_line() + "\n" + rec_b.to_json_line() + "\n")
        with pytest.raises(ValueError):
            read_database(out, scenario_kind="reflector_offset")
