"""Backend equivalence: the compiled extension against the numpy fallback."""

import os
import subprocess
import sys

import numpy as np
import pytest

from mixflow._kernels import backend_name, pure

try:
    from mixflow._kernels import _core as compiled
except ImportError:
    compiled = None

needs_compiled = pytest.mark.skipif(compiled is None, reason="compiled extension not built")

rng = np.random.default_rng(42)


@needs_compiled
class TestBackendEquivalence:
    def test_thomas_solve(self):
        n = 200
        dl = -rng.uniform(0.1, 1.0, n)
        du = -rng.uniform(0.1, 1.0, n)
        d = rng.uniform(0.1, 1.0, n) + 2.5  # diagonally dominant
        b = rng.standard_normal(n)
        xa = compiled.thomas_solve(dl, d, du, b)
        xb = pure.thomas_solve(dl, d, du, b)
        np.testing.assert_allclose(xa, xb, rtol=1e-12, atol=1e-13)
        # residual check against the assembled matrix
        A = np.diag(d) + np.diag(dl[1:], -1) + np.diag(du[:-1], 1)
        np.testing.assert_allclose(A @ xa, b, atol=1e-10)

    def test_matvec_1d(self):
        n = 64
        x = rng.standard_normal(n)
        diag = rng.uniform(0.5, 2.0, n)
        for bc in ([0, 0], [1, 0], [1, 1]):
            bc = np.asarray(bc, dtype=np.int32)
            ya = compiled.matvec_1d(x, diag, 0.7, float(n * n), bc)
            yb = pure.matvec_1d(x.copy(), diag, 0.7, float(n * n), bc)
            np.testing.assert_allclose(ya, yb, rtol=1e-13, atol=1e-11)

    def test_matvec_2d(self):
        x = rng.standard_normal((17, 13))
        diag = rng.uniform(0.5, 2.0, (17, 13))
        for bc in ([0, 0, 0, 0], [1, 1, 0, 0], [1, 1, 1, 1]):
            bc = np.asarray(bc, dtype=np.int32)
            ya = compiled.matvec_2d(x, diag, 0.2, 289.0, 169.0, bc)
            yb = pure.matvec_2d(x.copy(), diag, 0.2, 289.0, 169.0, bc)
            np.testing.assert_allclose(ya, yb, rtol=1e-13, atol=1e-11)

    @pytest.mark.parametrize("modes", [(0, 0), (1, 1), (0, 1)])
    def test_sample_1d(self, modes):
        vals = rng.standard_normal((3, 30))
        q = rng.uniform(-0.3, 1.3, 500)
        a = compiled.sample_1d(vals, q, 0.0, 1.0 / 30, 30, modes[0], modes[1])
        b = pure.sample_1d(vals, q, 0.0, 1.0 / 30, 30, modes[0], modes[1])
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-14)

    @pytest.mark.parametrize("modes", [(0, 0, 0, 0), (1, 1, 1, 1), (0, 1, 1, 0)])
    def test_sample_2d(self, modes):
        vals = rng.standard_normal((2, 14, 11))
        qx = rng.uniform(-0.2, 1.2, 400)
        qy = rng.uniform(-0.2, 1.2, 400)
        m = np.asarray(modes, dtype=np.int32)
        a = compiled.sample_2d(vals, qx, qy, 0.0, 1.0 / 14, 14, 0.0, 1.0 / 11, 11, m)
        b = pure.sample_2d(vals, qx, qy, 0.0, 1.0 / 14, 14, 0.0, 1.0 / 11, 11, m)
        np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-14)

    @pytest.mark.parametrize("order", [2, 4])
    @pytest.mark.parametrize("mode", [0, 1])
    def test_backtrace_1d(self, order, mode):
        nx = 40
        vx0 = 0.8 * rng.standard_normal(nx + 1)
        vx1 = 0.8 * rng.standard_normal(nx + 1)
        xq = rng.uniform(0.0, 1.0, 300)
        modes = np.full(2, mode, dtype=np.int32)
        a = compiled.backtrace_1d(vx0, vx1, xq, 1.0, 0.0, 0.08, 5, order,
                                  0.0, 1.0 / nx, nx, modes)
        b = pure.backtrace_1d(vx0, vx1, xq, 1.0, 0.0, 0.08, 5, order,
                              0.0, 1.0 / nx, nx, modes)
        np.testing.assert_allclose(a[0], b[0], atol=1e-13)
        assert np.array_equal(a[1], b[1])
        np.testing.assert_allclose(a[2], b[2], atol=1e-13)

    @pytest.mark.parametrize("order", [2, 4])
    @pytest.mark.parametrize("mode", [0, 1])
    def test_backtrace_2d(self, order, mode):
        nx, ny = 12, 9
        vx0 = 0.6 * rng.standard_normal((nx + 1, ny))
        vx1 = 0.6 * rng.standard_normal((nx + 1, ny))
        vy0 = 0.6 * rng.standard_normal((nx, ny + 1))
        vy1 = 0.6 * rng.standard_normal((nx, ny + 1))
        xq = rng.uniform(0.0, 1.2, 250)
        yq = rng.uniform(0.0, 0.9, 250)
        modes = np.full(4, mode, dtype=np.int32)
        a = compiled.backtrace_2d(vx0, vx1, vy0, vy1, xq, yq, 1.0, 0.0, 0.1, 4, order,
                                  0.0, 1.2 / nx, nx, 0.0, 0.9 / ny, ny, modes)
        b = pure.backtrace_2d(vx0, vx1, vy0, vy1, xq, yq, 1.0, 0.0, 0.1, 4, order,
                              0.0, 1.2 / nx, nx, 0.0, 0.9 / ny, ny, modes)
        np.testing.assert_allclose(a[0], b[0], atol=1e-13)
        np.testing.assert_allclose(a[1], b[1], atol=1e-13)
        assert np.array_equal(a[2], b[2])
        np.testing.assert_allclose(a[3], b[3], atol=1e-13)


class TestBackendSelection:
    def test_name_reported(self):
        assert backend_name() in ("compiled", "pure")

    def test_pure_forced_by_env(self):
        code = "from mixflow._kernels import backend_name; print(backend_name())"
        env = dict(os.environ, MIXFLOW_PURE="1")
        res = subprocess.run([sys.executable, "-c", code], capture_output=True,
                             text=True, env=env)
        assert res.stdout.strip() == "pure"

    @needs_compiled
    def test_compiled_default_when_available(self):
        env = {k: v for k, v in os.environ.items() if k != "MIXFLOW_PURE"}
        code = "from mixflow._kernels import backend_name; print(backend_name())"
        res = subprocess.run([sys.executable, "-c", code], capture_output=True,
                             text=True, env=env)
        assert res.stdout.strip() == "compiled"
