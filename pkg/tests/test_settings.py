"""
Tests for settings and logging configuration.
"""
import logging

import pytest

from logging_config import log_performance_metrics, setup_logging
from settings import Settings


class TestSettings:
    """Test cases for environment-driven defaults."""

    def test_defaults(self):
        """Test a few documented defaults."""
        s = Settings(_env_file=None)
        assert s.resolution == 2 ** 14
        assert s.eps_ratio == pytest.approx(0.01)
        assert s.forcing_term_variant == "mode"

    def test_env_override(self, monkeypatch):
        """Test that LABP_ variables override defaults."""
        monkeypatch.setenv("LABP_THREADS", "8")
        monkeypatch.setenv("LABP_GAUGE_C", "3.5")
        s = Settings(_env_file=None)
        assert s.threads == 8
        assert s.gauge_c == pytest.approx(3.5)


class TestLogging:
    """Test cases for logging setup."""

    def test_invalid_level(self):
        """Test that an unknown level name is rejected."""
        with pytest.raises(ValueError, match="Invalid log level"):
            setup_logging(log_level="LOUD")

    def test_file_handler(self, temp_dir):
        """Test that a log file is created when requested."""
        log_file = temp_dir / "logs" / "labp.log"
        setup_logging(log_level="INFO", log_file=str(log_file))
        try:
            log_performance_metrics("lap_scan", 2.0, 4)
            for handler in logging.getLogger().handlers:
                handler.flush()
            assert "Avg: 0.50s/task" in log_file.read_text()
        finally:
            setup_logging(log_level="WARNING")
