"""Tests for simulated scenarios and Monte Carlo studies"""

import os
import shutil
import statistics
import sys
import tempfile
import unittest
from pathlib import Path
from unittest.mock import patch

import numpy as np
import pandas as pd

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from rank_aft.estimators import WeightKind
from rank_aft.exceptions import SchemaError, StudyAbortedError, ValidationError
from rank_aft.simgen import (CALIBRATION_TOLERANCE, INTERCEPT, LEFT_START, RIGHT_START, ErrorLaw, FitOption,
                             McStudyReport, ParameterRow, ScenarioConfig, ScenarioKind, _dc_bounds, _draw_latent,
                             calibrate, gehan_null_rejection_rate, gen_clustered, gen_dc, gen_pic, generate,
                             load_study_plan, relative_efficiency, run_mc_study)

SLOW = os.environ.get("RANK_AFT_SLOW") == "1"


class TestScenarioConfig(unittest.TestCase):

    def test_defaults(self):
        """Test the default scenario"""
        cfg = ScenarioConfig()
        self.assertEqual(cfg.kind, ScenarioKind.PIC)
        self.assertEqual(cfg.beta, (1.0, 1.0))

    def test_rejects_bad_rates(self):
        """Test censoring rate range checks"""
        with self.assertRaises(ValidationError):
            ScenarioConfig(censoring=1.2)
        with self.assertRaises(ValidationError):
            ScenarioConfig(left_censoring=0.6, right_censoring=0.5)

    def test_rejects_small_samples(self):
        """Test that tiny samples are rejected"""
        with self.assertRaises(ValidationError):
            ScenarioConfig(n=5)

    def test_rejects_negative_seed(self):
        """Test that a negative seed is rejected"""
        with self.assertRaises(ValidationError):
            ScenarioConfig(seed=-1)

    def test_from_mapping(self):
        """Test building a scenario from YAML values"""
        cfg = ScenarioConfig.from_mapping({'kind': "DC", 'error': "ev", 'n': "120", 'beta': [0.5, 2]})
        self.assertEqual(cfg.kind, ScenarioKind.DC)
        self.assertEqual(cfg.error, ErrorLaw.EXTREME_VALUE)
        self.assertEqual(cfg.n, 120)
        self.assertEqual(cfg.beta, (0.5, 2.0))
        self.assertEqual(ScenarioConfig.from_mapping(cfg.to_dict()), cfg)

    def test_from_mapping_unknown_key(self):
        """Test that an unknown key is a schema error"""
        with self.assertRaises(SchemaError):
            ScenarioConfig.from_mapping({'n': 100, 'colour': "red"})

    def test_from_mapping_unknown_law(self):
        """Test that an unknown error law is a schema error"""
        with self.assertRaises(SchemaError):
            ScenarioConfig.from_mapping({'error': "cauchy"})


class TestFitOption(unittest.TestCase):

    def test_parse(self):
        """Test fit option parsing"""
        option = FitOption.parse("logrank")
        self.assertEqual(option.weight.kind, WeightKind.LOGRANK)
        self.assertEqual(FitOption.parse("gehan/inverse").label, "gehan/inverse")


class TestLoadStudyPlan(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures"""
        self.temp_dir = tempfile.mkdtemp()

    def tearDown(self):
        """Clean up test fixtures"""
        shutil.rmtree(self.temp_dir)

    def test_reads_scenario_and_fits(self):
        """Test reading a scenario file with its fits"""
        path = Path(self.temp_dir) / "scenario.yaml"
        path.write_text("kind: pic_clustered\nn: 100\ntheta: 2\nfits: gehan, gehan/inverse\nreplicates: 30\n")
        plan = load_study_plan(path)
        self.assertEqual(plan.scenario.kind, ScenarioKind.PIC_CLUSTERED)
        self.assertEqual(plan.scenario.theta, 2.0)
        self.assertEqual([f.label for f in plan.fits], ["gehan", "gehan/inverse"])
        self.assertEqual(plan.replicates, 30)
        self.assertEqual(plan.resamples, 200)

    def test_shipped_scenarios_load(self):
        """Test that every shipped scenario loads"""
        scenarios = Path(__file__).resolve().parent.parent / "scenarios"
        for path in sorted(scenarios.glob("*.yaml")):
            self.assertTrue(load_study_plan(path).fits, path.name)

    def test_missing_file(self):
        """Test that a missing scenario file is a schema error"""
        with self.assertRaises(SchemaError):
            load_study_plan(Path(self.temp_dir) / "missing.yaml")

    def test_not_a_mapping(self):
        """Test that a list scenario file is a schema error"""
        path = Path(self.temp_dir) / "list.yaml"
        path.write_text("- 1\n- 2\n")
        with self.assertRaises(SchemaError):
            load_study_plan(path)


class TestCalibration(unittest.TestCase):

    def test_pic_censoring_rate(self):
        """Test calibration to the PIC censoring target"""
        for target in (0.3, 0.5):
            calibration = calibrate(ScenarioConfig(censoring=target, seed=3))
            realized = dict(calibration.realized)['censored']
            self.assertLessEqual(abs(realized - target), CALIBRATION_TOLERANCE)
            self.assertIsNotNone(calibration.p0)

    def test_dc_rates(self):
        """Test calibration to the DC left and right targets"""
        calibration = calibrate(ScenarioConfig(kind=ScenarioKind.DC, seed=4))
        realized = dict(calibration.realized)
        self.assertLessEqual(abs(realized['left'] - 0.15), CALIBRATION_TOLERANCE)
        self.assertLessEqual(abs(realized['right'] - 0.15), CALIBRATION_TOLERANCE)

    def test_calibration_is_deterministic(self):
        """Test that calibration is reproducible"""
        cfg = ScenarioConfig(kind=ScenarioKind.DC, seed=5)
        self.assertEqual(calibrate(cfg), calibrate(cfg))


class TestGenerators(unittest.TestCase):

    def test_same_replicate_same_data(self):
        """Test that a replicate index fixes its data"""
        cfg = ScenarioConfig(n=50, seed=1)
        calibration = calibrate(cfg)
        first = generate(cfg, calibration, 2)
        again = generate(cfg, calibration, 2)
        other = generate(cfg, calibration, 3)
        np.testing.assert_array_equal(first.lower, again.lower)
        np.testing.assert_array_equal(first.upper, again.upper)
        self.assertFalse(np.array_equal(first.lower, other.lower))

    def test_pic_realized_censoring(self):
        """Test the realized PIC censoring fraction"""
        data = gen_pic(ScenarioConfig(n=2000, seed=6))
        summary = data.summary()
        self.assertAlmostEqual(summary['censored_fraction'], 0.3, delta=0.05)
        self.assertEqual(summary['clusters'], 2000)

    def test_pic_brackets_follow_examination_gaps(self):
        """Test that PIC brackets are examination gaps"""
        data = gen_pic(ScenarioConfig(n=300, seed=7))
        censored = data.delta == 0
        finite = censored & np.isfinite(data.upper)
        widths = data.upper[finite] - data.lower[finite]
        self.assertTrue(np.all(widths >= 0.1 - 1e-12))
        self.assertTrue(np.all(widths <= 1.0 + 1e-12))
        self.assertTrue(np.all(data.lower[censored] < 100.0))

    def test_dc_has_no_interval_brackets(self):
        """Test that DC data has only one-sided censoring"""
        summary = gen_dc(ScenarioConfig(kind=ScenarioKind.DC, n=2000, seed=8)).summary()
        self.assertEqual(summary['interval'], 0)
        self.assertAlmostEqual(summary['left_fraction'], 0.15, delta=0.04)
        self.assertAlmostEqual(summary['right_fraction'], 0.15, delta=0.04)

    def test_clustered_sizes(self):
        """Test the cluster size range and mean"""
        data = gen_clustered(ScenarioConfig(n=600, seed=9, theta=1.0))
        sizes = data.cluster_sizes
        self.assertEqual(data.n_clusters, 600)
        self.assertGreaterEqual(sizes.min(), 2)
        self.assertLessEqual(sizes.max(), 11)
        self.assertAlmostEqual(float(sizes.mean()), 6.5, delta=0.35)

    def test_dc_bounds_without_covariates(self):
        """Test that zero covariates leave the bare uniform bounds"""
        u_left = np.array([0.0, 0.25, 1.0])
        u_right = np.array([0.5, 1.0, 0.0])
        c_left, c_right = 1.5, 9.0
        log_l, log_r = _dc_bounds(np.zeros((3, 2)), u_left, u_right, c_left, c_right)
        np.testing.assert_allclose(log_l, LEFT_START + (c_left - LEFT_START) * u_left)
        np.testing.assert_allclose(log_r, log_l + RIGHT_START + (c_right - RIGHT_START) * u_right)

    def test_dc_bounds_shrink_with_covariates(self):
        """Test the covariate multipliers on both bounds"""
        X = np.array([[4.0, 0.0], [0.0, 2.0], [2.0, 1.0]])
        u = np.full(3, 0.5)
        base_l, base_r = _dc_bounds(np.zeros((3, 2)), u, u, 1.5, 9.0)
        log_l, log_r = _dc_bounds(X, u, u, 1.5, 9.0)
        np.testing.assert_allclose(log_l, [0.0, base_l[1], 0.5 * base_l[2]])
        np.testing.assert_allclose(log_r - log_l, [base_r[0] - base_l[0], 0.0, 0.5 * (base_r[2] - base_l[2])])

    def test_frailty_has_unit_mean(self):
        """Test that the gamma frailty has mean one for several dependence levels"""
        for theta in (0.5, 1.0, 2.0):
            latent = _draw_latent(np.random.default_rng(12), ScenarioConfig(kind=ScenarioKind.PIC_CLUSTERED,
                                                                            theta=theta), 40000)
            self.assertAlmostEqual(float(latent.frailty.mean()), 1.0, delta=0.03)
            self.assertAlmostEqual(float(latent.frailty.var()), theta, delta=0.1 * theta)

    def test_cluster_size_follows_frailty(self):
        """Test that larger clusters carry larger frailties and wider within-cluster spread"""
        cfg = ScenarioConfig(kind=ScenarioKind.PIC_CLUSTERED, theta=1.0)
        latent = _draw_latent(np.random.default_rng(13), cfg, 4000)
        sizes = np.bincount(latent.clusters)
        order = np.argsort(latent.frailty)
        self.assertTrue(np.all(np.diff(sizes[order]) >= 0))
        residual = latent.log_t - INTERCEPT - latent.X @ np.asarray(cfg.beta)
        size_of_subject = sizes[latent.clusters]
        small = float(np.mean(residual[size_of_subject == 2] ** 2))
        large = float(np.mean(residual[size_of_subject == 11] ** 2))
        self.assertGreater(large, 10.0 * small)

    def test_error_laws_have_expected_means(self):
        """Test the error law means"""
        gen = np.random.default_rng(10)
        self.assertAlmostEqual(float(ErrorLaw.NORMAL.draw(gen, 200000).mean()), 0.0, delta=0.01)
        # minimum Gumbel has mean minus the Euler constant
        self.assertAlmostEqual(float(ErrorLaw.EXTREME_VALUE.draw(gen, 200000).mean()), -0.5772, delta=0.01)
        self.assertAlmostEqual(float(ErrorLaw.EXP1.draw(gen, 200000).mean()), 1.0, delta=0.01)


class TestRunMcStudy(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures"""
        self.cfg = ScenarioConfig(n=60, seed=11)
        self.options = [FitOption.parse("gehan")]

    def test_small_study(self):
        """Test a small study report"""
        report = run_mc_study(self.cfg, self.options, replicates=4, resamples=40, keep_raw=True)
        self.assertEqual(report.failures, 0)
        self.assertEqual(report.replicates, 4)
        self.assertEqual([r.parameter for r in report.rows], ["beta1", "beta2"])
        self.assertEqual(list(report.to_frame().columns),
                         ['fit', 'parameter', 'truth', 'bias', 'ese', 'ase', 'cp', 'mse'])
        self.assertEqual(len(report.raw_estimates), 4)
        self.assertNotIn('wall_time', report.to_dict())
        self.assertAlmostEqual(report.censoring['censored_fraction'], 0.3, delta=0.15)

    def test_thread_count_does_not_change_result(self):
        """Test that threads do not change the study"""
        serial = run_mc_study(self.cfg, self.options, replicates=3, resamples=30, threads=1)
        parallel = run_mc_study(self.cfg, self.options, replicates=3, resamples=30, threads=3)
        pd.testing.assert_frame_equal(serial.to_frame(), parallel.to_frame())

    def test_aborts_when_replicates_fail(self):
        """Test that too many failed replicates abort the study"""
        with patch('rank_aft.simgen.generate', side_effect=ValidationError("broken replicate")):
            with self.assertRaises(StudyAbortedError):
                run_mc_study(self.cfg, self.options, replicates=3, resamples=30)

    def test_needs_fit_options(self):
        """Test that a study needs at least one fit"""
        with self.assertRaises(ValidationError):
            run_mc_study(self.cfg, [], replicates=2)


class TestRelativeEfficiency(unittest.TestCase):

    def test_ratio_of_mse(self):
        """Test relative efficiency as a ratio of MSE"""
        rows = [ParameterRow("gehan", "beta1", 1.0, 0.0, 0.1, 0.1, 0.95, 0.04),
                ParameterRow("gehan/inverse", "beta1", 1.0, 0.0, 0.1, 0.1, 0.95, 0.02)]
        report = McStudyReport({}, rows, 100, 0, 0.0, {}, {})
        self.assertAlmostEqual(relative_efficiency(report, "gehan/inverse", "gehan")['beta1'], 2.0)
        self.assertAlmostEqual(relative_efficiency(report, "gehan", "gehan/inverse")['beta1'], 0.5)


@unittest.skipUnless(SLOW, "set RANK_AFT_SLOW=1 to run the full simulation checks")
class TestSimulationBenchmarks(unittest.TestCase):

    def test_pic_normal_thirty_percent(self):
        """Test PIC bias, ESE and coverage at thirty percent censoring"""
        cfg = ScenarioConfig(n=400, censoring=0.3, seed=2024)
        options = [FitOption.parse("gehan"), FitOption.parse("logrank")]
        report = run_mc_study(cfg, options, replicates=200, resamples=200, threads=4)
        for fit in ("gehan", "logrank"):
            for parameter, ese in (("beta1", 0.053), ("beta2", 0.103)):
                row = report.row(fit, parameter)
                self.assertLess(abs(row.bias), 0.02)
                self.assertAlmostEqual(row.ese, ese, delta=0.2 * ese)
                self.assertTrue(0.92 <= row.cp <= 0.97, f"{fit} {parameter} cp={row.cp}")
        iterations = report.outer_iterations["logrank"]
        self.assertLessEqual(statistics.median(iterations), 10)
        self.assertLessEqual(max(iterations), 20)

    def test_doubly_censored_normal(self):
        """Test DC bias and coverage"""
        cfg = ScenarioConfig(kind=ScenarioKind.DC, n=200, seed=2025)
        report = run_mc_study(cfg, [FitOption.parse("gehan")], replicates=200, resamples=200, threads=4)
        for row in report.rows:
            self.assertLess(abs(row.bias), 0.03)
            self.assertTrue(0.91 <= row.cp <= 0.97)

    def test_cluster_weighting_gains_efficiency(self):
        """Test that inverse cluster-size weights gain efficiency"""
        cfg = ScenarioConfig(kind=ScenarioKind.PIC_CLUSTERED, n=150, theta=1.0, seed=2026)
        options = [FitOption.parse("gehan"), FitOption.parse("gehan/inverse")]
        report = run_mc_study(cfg, options, replicates=100, resamples=100, threads=4)
        efficiency = relative_efficiency(report, "gehan/inverse", "gehan")
        self.assertGreater(efficiency["beta1"], 1.3)

    def test_two_sample_null_size(self):
        """Test the two-sample test size under the null"""
        cfg = ScenarioConfig(n=100, seed=2027)
        rate = gehan_null_rejection_rate(cfg, m=100, replicates=1000, threads=4)
        self.assertTrue(0.03 <= rate <= 0.07, f"rejection rate {rate}")


if __name__ == '__main__':
    unittest.main()
