import logging

import pytest


@pytest.fixture(autouse=True)
def isolated_settings(tmp_path, monkeypatch):
    """Keep tests away from the user's ~/.pixseg.toml."""
    monkeypatch.setenv("PIXSEG_SETTINGS", str(tmp_path / "settings" / "pixseg.toml"))


@pytest.fixture(autouse=True)
def reset_pixseg_logger():
    # The CLI binds its handler to whatever sys.stderr was during the test.
    yield
    logger = logging.getLogger("pixseg")
    for handler in list(logger.handlers):
        logger.removeHandler(handler)
    logger.setLevel(logging.NOTSET)
    logger.propagate = True
