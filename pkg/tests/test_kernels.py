import os
import subprocess
import sys

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from fleetlab import _kernels
from fleetlab._kernels import _pure
from fleetlab.floor import grid_floor
from fleetlab.sim import generate_floor
from fleetlab.sim.policy import _reverse_csr

core = pytest.importorskip("fleetlab._kernels._core")


def test_compiled_backend_is_default():
    assert _kernels.BACKEND == ("pure" if os.environ.get("FLEETLAB_PURE", "") not in ("", "0") else "compiled")


def test_environment_switch_forces_pure():
    out = subprocess.run([sys.executable, "-c", "from fleetlab import _kernels; print(_kernels.BACKEND)"],
                         env={**os.environ, "FLEETLAB_PURE": "1"}, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "pure"


@settings(max_examples=200, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 9), st.integers(1, 9)),
              elements=st.sampled_from([0.0, 0.5, 1.0, 2.0, 3.25])))
def test_dtw_backends_agree_on_ties(cost):
    assert core.dtw_accumulate(cost) == _pure.dtw_accumulate(cost)


@settings(max_examples=100, deadline=None)
@given(arrays(np.float64, st.tuples(st.integers(1, 12), st.integers(1, 12)),
              elements=st.floats(0, 100, allow_nan=False)))
def test_dtw_backends_agree(cost):
    assert core.dtw_accumulate(cost) == _pure.dtw_accumulate(cost)


def test_dtw_single_cell():
    assert core.dtw_accumulate(np.array([[2.5]])) == (2.5, 1)


@pytest.mark.parametrize("floor", [grid_floor(5, 4), generate_floor("sortation", 10, 8, 3),
                                   generate_floor("storage", 12, 9, 0)], ids=["grid", "sortation", "storage"])
def test_bfs_backends_agree(floor):
    indptr, indices = _reverse_csr(floor)
    rng = np.random.default_rng(0)
    for source in range(floor.n_vertices):
        blocked = (rng.random(floor.n_vertices) < 0.2).astype(np.uint8)
        for mask in (None, blocked):
            np.testing.assert_array_equal(core.bfs_distances(indptr, indices, source, mask),
                                          _pure.bfs_distances(indptr, indices, source, mask))


def test_bfs_blocked_source():
    indptr, indices = _reverse_csr(grid_floor(3, 3))
    blocked = np.zeros(9, dtype=np.uint8)
    blocked[4] = True
    assert (core.bfs_distances(indptr, indices, 4, blocked) == -1).all()
