import os
import subprocess
import sys

import numpy as np
import pytest

from mmmrec import kernels
from mmmrec.elf import DENSITY_FLOOR

IMPLS = kernels.implementations()


def _fields(seed=0, n=(9, 7, 3)):
    rng = np.random.default_rng(seed)
    pos = rng.uniform(2, 6, size=(4, 3))
    pos[0] = [0.0, 0.0, 0.0]  # a nucleus on a grid point
    zeta = rng.uniform(0.8, 2.5, size=4)
    nelec = rng.integers(1, 7, size=4).astype(float)
    xs, ys, zs = (np.linspace(0, 8, k) for k in n)
    return pos, zeta, nelec, xs, ys, zs


def test_python_backend_always_available():
    assert "python" in IMPLS
    assert kernels.BACKEND in IMPLS


@pytest.mark.skipif("cython" not in IMPLS, reason="compiled extension not built")
def test_backends_agree_on_fields_and_elf():
    args = _fields()
    ref = IMPLS["python"].promolecular_fields(*args)
    got = IMPLS["cython"].promolecular_fields(*args)
    for a, b in zip(ref, got):
        np.testing.assert_allclose(b, a, rtol=1e-12, atol=0)
    e_ref = IMPLS["python"].elf_kernel(*ref, DENSITY_FLOOR)
    e_got = IMPLS["cython"].elf_kernel(*ref, DENSITY_FLOOR)
    np.testing.assert_allclose(e_got, e_ref, rtol=1e-12, atol=1e-15)


@pytest.mark.parametrize("name", sorted(IMPLS))
def test_reference_field_gives_exact_half(name):
    impl = IMPLS[name]
    rho = np.random.default_rng(5).uniform(1e-6, 5.0, size=(5, 4, 3))
    ref = impl.thomas_fermi(rho)
    np.testing.assert_allclose(ref, IMPLS["python"].thomas_fermi(rho), rtol=1e-14)
    assert np.all(impl.elf_kernel(rho, np.zeros((3,) + rho.shape), ref, DENSITY_FLOOR) == 0.5)


@pytest.mark.skipif("cython" not in IMPLS, reason="compiled extension not built")
def test_backends_agree_on_ddi_counts():
    rng = np.random.default_rng(1)
    cid_index = rng.integers(0, 9, size=14)
    adj = np.triu(rng.integers(0, 2, size=(9, 9)), 1).astype(np.uint8)
    adj = adj + adj.T
    pred = rng.integers(0, 2, size=(30, 14)).astype(np.uint8)
    a = IMPLS["python"].ddi_pair_counts(pred, cid_index, adj)
    b = IMPLS["cython"].ddi_pair_counts(pred, cid_index, adj)
    np.testing.assert_array_equal(a[0], b[0])
    np.testing.assert_array_equal(a[1], b[1])


def test_nucleus_gradient_is_zero():
    pos, zeta, nelec, xs, ys, zs = _fields()
    rho, grad, tau = kernels.promolecular_fields(pos[:1], zeta[:1], nelec[:1], xs, ys, zs)
    assert np.all(grad[:, 0, 0, 0] == 0.0)
    assert rho[0, 0, 0] == pytest.approx(nelec[0] * zeta[0] ** 3 / np.pi)


def test_env_var_forces_python_backend():
    code = "from mmmrec import kernels; print(kernels.BACKEND)"
    env = dict(os.environ, MMMREC_PURE_PYTHON="1")
    out = subprocess.run([sys.executable, "-c", code], env=env, capture_output=True, text=True, check=True)
    assert out.stdout.strip() == "python"
