import os
import subprocess
import sys

import numpy as np
import pytest

from ksgdiffuse import _accel

PROBE = (
    "import numpy as np\n"
    "from ksgdiffuse import _accel, c2f_reconstruct, SamplerConfig, ZeroDenoiser, new_cosine\n"
    "from ksgdiffuse.kspace import make_cartesian_mask\n"
    "from ksgdiffuse.phantom import gaussian_phantom, observe\n"
    "ph = gaussian_phantom(8, 8, seed=1)\n"
    "m = make_cartesian_mask(8, 8, 2, 0.25, 0)\n"
    "r = c2f_reconstruct(observe(ph.ground_truth, m), m, new_cosine(20), ZeroDenoiser(),\n"
    "                    SamplerConfig(T=20, k=2, N=2, T_refine=2))\n"
    "print(_accel.BACKEND)\n"
    "print(r.mean.tobytes().hex())\n"
)


def _probe(flag):
    env = dict(os.environ)
    env.pop("KSGDIFFUSE_PURE_NUMPY", None)
    if flag is not None:
        env["KSGDIFFUSE_PURE_NUMPY"] = flag
    out = subprocess.run([sys.executable, "-c", PROBE], env=env, capture_output=True, text=True, check=True)
    backend, mean_hex = out.stdout.split()
    return backend, np.frombuffer(bytes.fromhex(mean_hex), dtype=np.complex128)


@pytest.mark.skipif(not _accel.HAVE_NUMBA, reason="numba not installed")
def test_env_flag_selects_backend_and_results_agree():
    fast, a = _probe(None)
    assert fast == "numba"
    assert _probe("0")[0] == "numba"
    slow, b = _probe("1")
    assert slow == "numpy"
    np.testing.assert_allclose(a, b, rtol=0, atol=1e-12)


def test_kernel_sets_share_signatures():
    names = ("philox_words", "uniforms", "normals", "reverse_update", "gaussian_eps", "replace")
    for name in names:
        assert callable(getattr(_accel.NUMPY_KERNELS, name))
        if _accel.NUMBA_KERNELS is not None:
            assert callable(getattr(_accel.NUMBA_KERNELS, name))
    assert _accel.KERNELS.name == _accel.BACKEND
