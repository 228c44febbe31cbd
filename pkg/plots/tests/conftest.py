"""Produce real experiment CSVs once per session via the driver CLI."""

import subprocess
import sys

import pytest


@pytest.fixture(scope="session")
def products_dir(tmp_path_factory):
    out = tmp_path_factory.mktemp("products")
    proc = subprocess.run(
        [sys.executable, "-m", "partrace.cli", "validate", "--out-dir", str(out)],
        capture_output=True,
        text=True,
    )
    assert proc.returncode == 0, f"validation run failed:\n{proc.stdout}\n{proc.stderr}"
    return out
