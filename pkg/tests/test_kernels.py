import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st
from hypothesis.extra.numpy import arrays

from bayesfl import kernels

backends = kernels.available_backends()
needs_both = pytest.mark.skipif(len(backends) < 2, reason="compiled extension not built")

dims = st.tuples(st.integers(1, 6), st.integers(1, 40))
vals = st.floats(-1e3, 1e3, allow_nan=False)


def test_backend_reported():
    assert kernels.BACKEND in backends


@needs_both
@given(dims.flatmap(lambda d: st.tuples(
    arrays(np.float64, d, elements=vals),
    arrays(np.float64, d[0], elements=vals),
    arrays(np.float64, d[0], elements=st.floats(0, 10)),
    arrays(np.float64, d[0], elements=vals),
    arrays(np.int8, d[0], elements=st.sampled_from([kernels.TANH, kernels.SIGN, kernels.LINEAR])),
)))
def test_separable_sum_backends_agree(args):
    y, off, scale, gain, kind = args
    a = kernels.separable_sum(y, off, scale, gain, kind, backend="python")
    b = kernels.separable_sum(y, off, scale, gain, kind, backend="cython")
    np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-9)


@needs_both
@given(st.integers(1, 5), st.integers(1, 20), st.integers(0, 2**32 - 1))
def test_row_sq_error_backends_agree(width, rows, seed):
    rng = np.random.default_rng(seed)
    est, truth = rng.standard_normal((2, rows * width))
    a = kernels.row_sq_error(est, truth, width, backend="python")
    b = kernels.row_sq_error(est, truth, width, backend="cython")
    np.testing.assert_allclose(a, b, rtol=1e-13)


@pytest.mark.parametrize("backend", backends)
def test_separable_sum_reference(backend):
    y = np.array([[0.5, -2.0, 0.0], [1.0, 1.0, -1.0], [3.0, -3.0, 0.0]])
    off = np.array([0.1, 0.2, 0.3])
    scale = np.array([2.0, 1.0, 0.5])
    gain = np.array([1.5, -1.0, 0.25])
    kind = np.array([kernels.TANH, kernels.SIGN, kernels.LINEAR], dtype=np.int8)
    ref = (off.sum() + 2.0 * np.tanh(1.5 * y[0]) + 1.0 * -np.where(y[1] >= 0, 1.0, -1.0)
           + 0.5 * 0.25 * y[2])
    np.testing.assert_allclose(kernels.separable_sum(y, off, scale, gain, kind, backend=backend),
                               ref, rtol=1e-14)


@pytest.mark.parametrize("backend", backends)
def test_row_sq_error_reference(backend):
    est = np.arange(6.0)
    np.testing.assert_allclose(kernels.row_sq_error(est, np.zeros(6), 3, backend=backend), [5, 50])


def test_shape_errors():
    with pytest.raises(ValueError):
        kernels.separable_sum(np.zeros(3), np.zeros(1), np.zeros(1), np.zeros(1), np.zeros(1))
    with pytest.raises(ValueError):
        kernels.separable_sum(np.zeros((2, 3)), np.zeros(1), np.zeros(2), np.zeros(2),
                              np.zeros(2))
    with pytest.raises(ValueError):
        kernels.row_sq_error(np.zeros(5), np.zeros(5), 2)
    with pytest.raises(ValueError):
        kernels.separable_sum(np.zeros((1, 1)), [0], [1], [1], [0], backend="fortran")


def test_pure_python_selected_by_env(tmp_path):
    import subprocess
    import sys

    out = subprocess.run(
        [sys.executable, "-c", "from bayesfl import kernels; print(kernels.BACKEND)"],
        env={"BAYESFL_PURE_PYTHON": "1", "PATH": ""}, capture_output=True, text=True, check=True,
        cwd=tmp_path,
    )
    assert out.stdout.strip() == "python"
