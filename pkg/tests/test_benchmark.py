import runpy
from pathlib import Path

import pytest

from stallsgd import _accel

BENCH = Path(__file__).resolve().parents[1] / "benchmarks" / "bench_kernels.py"


@pytest.mark.skipif(not _accel.HAS_NUMBA, reason="benchmark compares against numba")
def test_benchmark_smoke(capsys):
    before = _accel.get_backend()
    runpy.run_path(str(BENCH))["main"](["--repeat", "1", "--scale", "0.01"])
    out = capsys.readouterr().out.splitlines()
    assert out[0].startswith("kernel") and len(out) == 5
    assert _accel.get_backend() == before
