"""Tests for the run log that travels with a run's artifacts."""

import logging

from homog.log import LOG_LEVEL_ENV, RUN_LOG_NAME, _level_from_env, attach_run_log, detach_run_log, logger


class TestRunLog:

    def test_records_between_attach_and_detach(self, tmp_path):
        handler = attach_run_log(tmp_path)
        logger.info("inside the run")
        logger.debug("too detailed for the run log")
        detach_run_log(handler)
        logger.info("after the run")
        text = (tmp_path / RUN_LOG_NAME).read_text(encoding="utf-8")
        assert "inside the run" in text
        assert "too detailed" not in text
        assert "after the run" not in text
        assert handler not in logger.handlers

    def test_rerun_overwrites(self, tmp_path):
        for message in ("first run", "second run"):
            handler = attach_run_log(tmp_path)
            logger.warning(message)
            detach_run_log(handler)
        text = (tmp_path / RUN_LOG_NAME).read_text(encoding="utf-8")
        assert "second run" in text
        assert "first run" not in text


class TestLevel:

    def test_default_is_debug(self, monkeypatch):
        monkeypatch.delenv(LOG_LEVEL_ENV, raising=False)
        assert _level_from_env() == logging.DEBUG

    def test_env_value(self, monkeypatch):
        monkeypatch.setenv(LOG_LEVEL_ENV, "warning")
        assert _level_from_env() == logging.WARNING

    def test_unknown_name_falls_back(self, monkeypatch):
        monkeypatch.setenv(LOG_LEVEL_ENV, "chatty")
        assert _level_from_env() == logging.DEBUG
