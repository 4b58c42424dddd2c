import os
import subprocess
import sys
from pathlib import Path

PROJECT_ROOT = Path(__file__).resolve().parents[1]


def _run(*args, tmp_path):
    env = dict(os.environ, PYTHONPATH=str(PROJECT_ROOT / "src"), PIXSEG_SETTINGS=str(tmp_path / "none.toml"))
    return subprocess.run(
        [sys.executable, "-m", "pixseg.cli", *args],
        cwd=PROJECT_ROOT,
        env=env,
        capture_output=True,
        text=True,
        check=False,
    )


def test_module_entry_point_prints_version(tmp_path):
    result = _run("--version", tmp_path=tmp_path)
    assert result.returncode == 0
    assert result.stdout.strip() == "pixseg 0.1.0"


def test_missing_subcommand_is_a_usage_error(tmp_path):
    result = _run(tmp_path=tmp_path)
    assert result.returncode == 1
    assert "usage: pixseg" in result.stderr
