"""Test cases for the logs module."""

import logging
from typing import Callable

import pytest

from uniperturb.lib import logs


@pytest.mark.parametrize(
    "test",
    [
        {"args": [None], "attributes": {"log": None, "debug": False, "max_bytes": 10000000, "backups": 5}},
        {"args": [{"debug": True, "log_backups": 2}], "attributes": {"debug": True, "backups": 2}},
    ],
)
def test_log_config(test: dict, function_tester: Callable) -> None:
    """Logging settings fall back to their defaults."""
    function_tester(test, logs.LogConfig)


def test_log_message_external(capsys: pytest.CaptureFixture, caplog: pytest.LogCaptureFixture) -> None:
    """External messages are recorded and shown to the user."""
    service = logs.LogService(logging.getLogger("uniperturb.test"))
    with caplog.at_level(logging.INFO, logger="uniperturb"):
        service.log_message("hidden")
        service.log_message("shown", external=True)
    assert capsys.readouterr().out == "shown\n"
    assert [record.getMessage() for record in caplog.records] == ["hidden", "shown"]


def test_setup_logger_file(tmp_path: str) -> None:
    """The toolkit logger writes to one rotating file, however often it is set up."""
    path = str(tmp_path / "logs" / "run.log")
    logger = logs.setup_logger(logs.LogConfig({"log": path, "debug": True}))
    try:
        logs.setup_logger(logs.LogConfig({"log": path, "debug": True}))
        assert logger.level == logging.DEBUG
        assert len([handler for handler in logger.handlers if isinstance(handler, logging.FileHandler)]) == 1
        logs.LogService().log_message("epoch finished", level=logging.DEBUG)
        for handler in logger.handlers:
            handler.flush()
        with open(path, "rt", encoding="utf-8") as log_file:
            assert "DEBUG - epoch finished" in log_file.read()
    finally:
        for handler in list(logger.handlers):
            logger.removeHandler(handler)
            handler.close()
        logger.setLevel(logging.INFO)
