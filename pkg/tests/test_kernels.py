from __future__ import annotations

import os
import subprocess
import sys

import numpy as np
import pytest

from hdnn import kernels
from hdnn._accel import HAVE_NUMBA, numba_enabled
from hdnn.backprop import bsm_trace, loss_and_grads
from hdnn.continuum import planar_flow, planar_path
from hdnn.layers import run_forward, substeps

from conftest import ARCHS, random_net

needs_numba = pytest.mark.skipif(not HAVE_NUMBA, reason="numba not installed")


@pytest.mark.parametrize("value,expected", [("1", False), ("true", False), ("0", True), ("", True)])
def test_env_flag(monkeypatch, value, expected):
    monkeypatch.setenv("HDNN_DISABLE_NUMBA", value)
    assert numba_enabled() is (expected and HAVE_NUMBA)


@needs_numba
@pytest.mark.parametrize("arch", ARCHS)
def test_backends_agree(arch, rng):
    net = random_net(arch, N=7, weight_std=1.0)
    Y0 = rng.standard_normal((9, 4))
    labels = rng.integers(0, 2, 9)
    a = run_forward(net, Y0, use_numba=True)
    b = run_forward(net, Y0, use_numba=False)
    assert np.allclose(a.Ys, b.Ys, rtol=1e-13, atol=1e-14)
    ga = loss_and_grads(net, Y0, labels, use_numba=True)[1].flat()
    gb = loss_and_grads(net, Y0, labels, use_numba=False)[1].flat()
    assert np.allclose(ga, gb, rtol=1e-12, atol=1e-14)
    Ma = bsm_trace(net, a, use_numba=True).matrices
    Mb = bsm_trace(net, b, use_numba=False).matrices
    assert np.allclose(Ma, Mb, rtol=1e-12, atol=1e-14)


@needs_numba
def test_env_flag_selects_numpy_path(monkeypatch, rng):
    net = random_net("H1", N=3)
    Y0 = rng.standard_normal((2, 4))
    monkeypatch.setenv("HDNN_DISABLE_NUMBA", "1")
    called = []
    orig = kernels._forward_np

    def spy(*a):
        called.append(True)
        return orig(*a)

    monkeypatch.setattr(kernels, "_forward_np", spy)
    run_forward(net, Y0)
    assert called


@needs_numba
def test_planar_backends_agree(rng):
    Y = rng.standard_normal((6, 2))
    d = rng.uniform(0.0, 3.0, 6)
    assert np.allclose(planar_flow(Y, d, 1e-2, use_numba=True), planar_flow(Y, d, 1e-2, use_numba=False), atol=1e-13)
    p1 = planar_path(Y[0], 1e-2, 50, use_numba=True)
    p2 = planar_path(Y[0], 1e-2, 50, use_numba=False)
    assert np.allclose(p1, p2, atol=1e-13)


def test_kernel_shapes(rng):
    net = random_net("H2", N=4)
    As, Bs, cs, kinds, per = substeps(net)
    assert per == 2 and As.shape == (8, 4, 4)
    Ys, Zs = kernels.forward(As, Bs, cs, kinds, net.h, net.activation.code, rng.standard_normal((3, 4)), False)
    assert Ys.shape == (9, 3, 4) and Zs.shape == (8, 3, 4)


def test_package_works_without_numba_import(tmp_path):
    # a stub "numba" that fails to import forces the pure-numpy fallback
    (tmp_path / "numba").mkdir()
    (tmp_path / "numba" / "__init__.py").write_text("raise ImportError('blocked')\n")
    code = (
        "import numpy as np\n"
        "from hdnn._accel import HAVE_NUMBA\n"
        "from hdnn.layers import init_network, run_forward\n"
        "assert not HAVE_NUMBA\n"
        "print(run_forward(init_network('H1', 4, 2), np.ones((1, 4))).Ys.shape)\n"
    )
    env = dict(os.environ, PYTHONPATH=str(tmp_path) + os.pathsep + os.environ.get("PYTHONPATH", ""))
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, timeout=120)
    assert out.returncode == 0, out.stderr
    assert "(3, 1, 4)" in out.stdout
