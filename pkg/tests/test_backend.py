"""Parity suite pinning the compiled kernels to the numpy fallback."""

import subprocess
import sys

import numpy as np
import pytest

from fusemt.backend import pykernels

ckernels = pytest.importorskip(
    "fusemt.backend._ckernels",
    reason="compiled kernel extension not built",
)

# (dtype, rtol, atol): float32 kernels accumulate in different orders
# across the two backends, so parity is tolerance-based, not bit-exact.
CASES = [(np.float32, 2e-6, 1e-6), (np.float64, 1e-13, 1e-15)]


def rand(rng, shape, dtype, scale=1.0):
    return np.ascontiguousarray(
        (rng.standard_normal(shape) * scale).astype(dtype))


@pytest.mark.parametrize("dtype,rtol,atol", CASES)
class TestParity:
    def test_softmax_rows(self, dtype, rtol, atol):
        rng = np.random.default_rng(0)
        for shape in [(1, 1), (3, 7), (16, 31), (5, 200)]:
            x = rand(rng, shape, dtype, scale=4.0)
            ours = ckernels.softmax_rows(x)
            ref = pykernels.softmax_rows(x.copy())
            assert ours.dtype == ref.dtype == dtype
            np.testing.assert_allclose(ours, ref, rtol=rtol, atol=atol)
            np.testing.assert_allclose(ours.sum(axis=1), 1.0, rtol=1e-5)

    def test_softmax_xent(self, dtype, rtol, atol):
        rng = np.random.default_rng(1)
        for shape in [(1, 2), (4, 9), (12, 50)]:
            logits = rand(rng, shape, dtype, scale=3.0)
            targets = rng.integers(0, shape[1], shape[0])
            nll_c, probs_c = ckernels.softmax_xent(logits, targets)
            nll_p, probs_p = pykernels.softmax_xent(logits.copy(), targets)
            np.testing.assert_allclose(nll_c, nll_p, rtol=rtol, atol=atol)
            np.testing.assert_allclose(probs_c, probs_p, rtol=rtol, atol=atol)
            rows = np.arange(shape[0])
            for nll, probs in [(nll_c, probs_c), (nll_p, probs_p)]:
                np.testing.assert_allclose(
                    nll, -np.log(probs[rows, targets]), rtol=1e-5, atol=1e-6)

    def test_xent_backward(self, dtype, rtol, atol):
        rng = np.random.default_rng(2)
        for shape in [(1, 2), (6, 11), (9, 40)]:
            probs = pykernels.softmax_rows(rand(rng, shape, dtype))
            targets = rng.integers(0, shape[1], shape[0])
            dnll = rand(rng, shape[0], dtype)
            got = ckernels.xent_backward(probs, targets, dnll)
            ref = pykernels.xent_backward(probs.copy(), targets, dnll.copy())
            np.testing.assert_allclose(got, ref, rtol=rtol, atol=atol)
            # rows of (probs - onehot)*dnll always sum to zero
            np.testing.assert_allclose(got.sum(axis=1), 0.0, atol=1e-5)

    def test_gru_gates(self, dtype, rtol, atol):
        rng = np.random.default_rng(3)
        for batch, h in [(1, 1), (4, 6), (7, 16)]:
            ax = rand(rng, (batch, 3 * h), dtype, scale=2.0)
            ah = rand(rng, (batch, 3 * h), dtype, scale=2.0)
            h_prev = rand(rng, (batch, h), dtype)
            got = ckernels.gru_gates(ax, ah, h_prev)
            ref = pykernels.gru_gates(ax.copy(), ah.copy(), h_prev.copy())
            for g, r in zip(got, ref):
                assert g.dtype == dtype
                np.testing.assert_allclose(g, r, rtol=rtol, atol=atol)
            _, z, r, c = got
            assert np.all((z > 0) & (z < 1)) and np.all((r > 0) & (r < 1))
            assert np.all((c > -1) & (c < 1))

    def test_gru_gates_backward(self, dtype, rtol, atol):
        rng = np.random.default_rng(4)
        for batch, h in [(2, 3), (5, 10)]:
            ax = rand(rng, (batch, 3 * h), dtype)
            ah = rand(rng, (batch, 3 * h), dtype)
            h_prev = rand(rng, (batch, h), dtype)
            dh = rand(rng, (batch, h), dtype)
            _, z, r, c = pykernels.gru_gates(ax, ah, h_prev)
            got = ckernels.gru_gates_backward(dh, z, r, c, ah, h_prev)
            ref = pykernels.gru_gates_backward(dh.copy(), z.copy(), r.copy(),
                                               c.copy(), ah.copy(), h_prev.copy())
            for g, want in zip(got, ref):
                np.testing.assert_allclose(g, want, rtol=rtol, atol=atol)

    def test_adagrad_step(self, dtype, rtol, atol):
        rng = np.random.default_rng(5)
        for kernels in (ckernels, pykernels):
            param = rand(rng, (8, 5), dtype)
            grad = rand(rng, (8, 5), dtype)
            accum = np.abs(rand(rng, (8, 5), dtype))
            p2, a2 = param.copy(), accum.copy()
            assert kernels.adagrad_step(param, grad, accum, 0.1, 1e-8) is None
            pykernels.adagrad_step(p2, grad.copy(), a2, 0.1, 1e-8)
            np.testing.assert_allclose(param, p2, rtol=rtol, atol=atol)
            np.testing.assert_allclose(accum, a2, rtol=rtol, atol=atol)
            assert np.all(accum > 0)


class TestGruBackwardOracle:
    def test_matches_finite_differences(self):
        # central differences through the forward kernel, float64
        rng = np.random.default_rng(6)
        batch, h = 2, 3
        ax = rand(rng, (batch, 3 * h), np.float64)
        ah = rand(rng, (batch, 3 * h), np.float64)
        h_prev = rand(rng, (batch, h), np.float64)
        dh = rand(rng, (batch, h), np.float64)
        step = 1e-6

        def loss(ax_, ah_, hp_):
            h_new, _, _, _ = pykernels.gru_gates(ax_, ah_, hp_)
            return float((h_new * dh).sum())

        for kernels in (ckernels, pykernels):
            _, z, r, c = kernels.gru_gates(ax, ah, h_prev)
            dax, dah, dhp = kernels.gru_gates_backward(dh, z, r, c, ah, h_prev)
            for arr, grad in [(ax, dax), (ah, dah), (h_prev, dhp)]:
                flat, gflat = arr.ravel(), grad.ravel()
                for k in range(flat.size):
                    keep = flat[k]
                    flat[k] = keep + step
                    up = loss(ax, ah, h_prev)
                    flat[k] = keep - step
                    down = loss(ax, ah, h_prev)
                    flat[k] = keep
                    fd = (up - down) / (2 * step)
                    assert gflat[k] == pytest.approx(fd, rel=1e-5, abs=1e-8)


class TestContracts:
    def test_adagrad_requires_contiguous(self):
        param = np.zeros((4, 4), dtype=np.float64)[:, ::2]
        accum = np.zeros((4, 2), dtype=np.float64)
        grad = np.zeros((4, 2), dtype=np.float64)
        assert not param.flags.c_contiguous
        with pytest.raises(ValueError, match="contiguous"):
            ckernels.adagrad_step(param, grad, accum, 0.1, 1e-8)

    def test_adagrad_accepts_strided_grad(self):
        param = np.ones((3, 2), dtype=np.float64)
        accum = np.zeros((3, 2), dtype=np.float64)
        grad = np.ones((3, 4), dtype=np.float64)[:, ::2]
        p2, a2 = param.copy(), accum.copy()
        ckernels.adagrad_step(param, grad, accum, 0.1, 1e-8)
        pykernels.adagrad_step(p2, np.ascontiguousarray(grad), a2, 0.1, 1e-8)
        np.testing.assert_allclose(param, p2, rtol=1e-13)

    def test_extreme_logits_stay_finite(self):
        x = np.array([[1e4, -1e4, 0.0], [-1e4, -1e4, -1e4]], dtype=np.float64)
        for kernels in (ckernels, pykernels):
            out = kernels.softmax_rows(x.copy())
            assert np.all(np.isfinite(out))
            np.testing.assert_allclose(out.sum(axis=1), 1.0, rtol=1e-12)
            nll, probs = kernels.softmax_xent(x.copy(), np.array([0, 2]))
            assert np.all(np.isfinite(nll)) and np.all(np.isfinite(probs))


class TestSelection:
    def run_probe(self, env_value):
        code = ("import fusemt.backend as b; print(b.BACKEND_NAME)")
        env = {"FUSEMT_BACKEND": env_value} if env_value is not None else {}
        import os
        full = dict(os.environ)
        full.pop("FUSEMT_BACKEND", None)
        full.update(env)
        return subprocess.run([sys.executable, "-c", code], env=full,
                              capture_output=True, text=True)

    def test_numpy_forced(self):
        probe = self.run_probe("numpy")
        assert probe.returncode == 0 and probe.stdout.strip() == "numpy"

    def test_compiled_selected_by_default(self):
        probe = self.run_probe(None)
        assert probe.returncode == 0 and probe.stdout.strip() == "c"

    def test_unknown_value_rejected(self):
        probe = self.run_probe("fortran")
        assert probe.returncode != 0
        assert "FUSEMT_BACKEND" in probe.stderr
