"""Tests for configuration loading"""

import unittest
import tempfile
import shutil
from pathlib import Path
from unittest.mock import patch
import sys
import os

# Add src to path for imports
sys.path.insert(0, os.path.join(os.path.dirname(__file__), '..', 'src'))

from rank_aft.config import THREADS_ENV, ToolkitConfig
from rank_aft.exceptions import SchemaError


class TestToolkitConfig(unittest.TestCase):

    def setUp(self):
        """Set up test fixtures"""
        self.temp_dir = Path(tempfile.mkdtemp())
        self.config_file = self.temp_dir / "config.yaml"

    def tearDown(self):
        """Clean up temporary files"""
        shutil.rmtree(self.temp_dir)

    def test_defaults_without_file(self):
        """Test defaults when the config file does not exist"""
        config = ToolkitConfig(str(self.temp_dir / "missing.yaml"))
        self.assertEqual(config.get_weight_kind(), "gehan")
        self.assertEqual(config.get_cluster_weight(), "none")
        self.assertIsNone(config.get_big_m())
        self.assertEqual(config.get_resamples(), 200)
        self.assertEqual(config.get_ci_level(), 0.95)
        self.assertEqual(config.get_logging_file(), "rank_aft.log")

    def test_file_is_merged_over_defaults(self):
        """Test that a partial file keeps the remaining defaults"""
        self.config_file.write_text("fit:\n  weight: logrank\n  big_m: 500\nvariance:\n  resamples: 50\n")
        config = ToolkitConfig(str(self.config_file))
        self.assertEqual(config.get_weight_kind(), "logrank")
        self.assertEqual(config.get_big_m(), 500.0)
        self.assertEqual(config.get_resamples(), 50)
        self.assertEqual(config.get_max_outer_iter(), 50)
        self.assertEqual(config.get_solver_tol(), 1.0e-7)

    def test_invalid_yaml_falls_back(self):
        """Test that unreadable YAML falls back to defaults"""
        self.config_file.write_text("fit: [unclosed\n")
        with patch('builtins.print'):
            config = ToolkitConfig(str(self.config_file))
        self.assertEqual(config.get_weight_kind(), "gehan")

    def test_non_mapping_rejected(self):
        """Test that a top-level list is a schema error"""
        self.config_file.write_text("- gehan\n- logrank\n")
        with self.assertRaises(SchemaError):
            ToolkitConfig(str(self.config_file))

    def test_get_config_value(self):
        """Test dot-path lookups"""
        config = ToolkitConfig(str(self.temp_dir / "missing.yaml"))
        self.assertEqual(config.get_config_value('solver.block_size'), 256)
        self.assertEqual(config.get_config_value('solver.missing', 'fallback'), 'fallback')
        self.assertIsNone(config.get_config_value('fit.weight.deeper'))

    def test_empty_sections_use_defaults(self):
        """Test that getters fall back when a section is empty or not a mapping"""
        self.config_file.write_text("solver:\nvariance: 7\nfit:\n  seed: 5\n")
        config = ToolkitConfig(str(self.config_file))
        self.assertEqual(config.get_solver_tol(), 1.0e-7)
        self.assertEqual(config.get_block_size(), 256)
        self.assertEqual(config.get_resamples(), 200)
        self.assertEqual(config.get_k_scale(), 1.0)
        self.assertEqual(config.get_seed(), 5)
        self.assertEqual(config.get_weight_kind(), "gehan")

    def test_threads_environment_override(self):
        """Test that the environment beats the file"""
        self.config_file.write_text("runtime:\n  threads: 2\n")
        config = ToolkitConfig(str(self.config_file))
        with patch.dict(os.environ, {THREADS_ENV: ""}):
            self.assertEqual(config.get_threads(), 2)
        with patch.dict(os.environ, {THREADS_ENV: "6"}):
            self.assertEqual(config.get_threads(), 6)
        with patch.dict(os.environ, {THREADS_ENV: "many"}):
            with self.assertRaises(SchemaError):
                config.get_threads()

    def test_resolved_is_a_copy(self):
        """Test that the resolved config cannot mutate the live one"""
        config = ToolkitConfig(str(self.temp_dir / "missing.yaml"))
        resolved = config.resolved()
        resolved['fit']['weight'] = "logrank"
        self.assertEqual(config.get_weight_kind(), "gehan")


if __name__ == '__main__':
    unittest.main()
