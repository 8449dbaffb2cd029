import subprocess
import sys

import numpy as np
import pytest

from tubekoop.lifting import (
    Monomial,
    ThinPlateRbf,
    lift_batch,
    lift_state,
    make_monomial_basis,
    make_thin_plate_basis,
    vdp_monomial_basis,
)


def test_monomial_requires_identity_rows():
    with pytest.raises(ValueError, match="identity map"):
        make_monomial_basis([[1, 0], [2, 0]])


def test_monomial_rejects_duplicates():
    with pytest.raises(ValueError, match="duplicate"):
        make_monomial_basis([[1, 0], [0, 1], [1, 0]])


def test_monomial_rejects_negative_and_fractional():
    with pytest.raises(ValueError):
        make_monomial_basis([[1, 0], [0, 1], [-1, 2]])
    with pytest.raises(ValueError):
        make_monomial_basis([[1.0, 0.0], [0.0, 1.5]])


def test_vdp_basis_feature_order():
    basis = vdp_monomial_basis()
    assert basis.dim == 9 and basis.state_dim == 2
    x, y = 0.7, -1.3
    expected = [x, y, x * y, x**2, y**2, x**2 * y, x * y**2, x**3, y**3]
    np.testing.assert_allclose(lift_state(basis, [x, y]), expected, rtol=1e-14)


def test_monomial_batch_matches_pointwise():
    rng = np.random.default_rng(3)
    basis = vdp_monomial_basis()
    X = rng.normal(size=(40, 2))
    batch = lift_batch(basis, X)
    for j in range(X.shape[0]):
        np.testing.assert_allclose(batch[j], lift_state(basis, X[j]), rtol=1e-14)


def test_thin_plate_value_oracle():
    # phi(r) = r^2 log r against a direct evaluation, zero exactly at a center
    centers = np.array([[0.0, 0.0], [1.0, 2.0]])
    basis = ThinPlateRbf(centers=centers)
    x = np.array([3.0, 4.0])
    r0, r1 = 5.0, np.hypot(2.0, 2.0)
    np.testing.assert_allclose(
        lift_state(basis, x),
        [r0**2 * np.log(r0), r1**2 * np.log(r1)],
        rtol=1e-12,
    )
    at_center = lift_state(basis, np.array([1.0, 2.0]))
    assert at_center[1] == 0.0


def test_thin_plate_dims_and_append_state():
    box = np.array([[-1.0, 1.0], [-2.0, 2.0], [0.0, 3.0]])
    basis = make_thin_plate_basis(50, box, seed=7)
    assert basis.dim == 50 and basis.state_dim == 3
    appended = make_thin_plate_basis(50, box, seed=7, append_state=True)
    assert appended.dim == 53
    x = np.array([0.3, -0.4, 1.1])
    lifted = lift_state(appended, x)
    np.testing.assert_allclose(lifted[:3], x)
    np.testing.assert_allclose(lifted[3:], lift_state(basis, x))


def test_thin_plate_centers_inside_box_and_seedable():
    box = np.array([[-1.0, 1.0], [5.0, 6.0]])
    b1 = make_thin_plate_basis(200, box, seed=11)
    b2 = make_thin_plate_basis(200, box, seed=11)
    b3 = make_thin_plate_basis(200, box, seed=12)
    np.testing.assert_array_equal(b1.centers, b2.centers)
    assert not np.array_equal(b1.centers, b3.centers)
    assert (b1.centers >= box[:, 0]).all() and (b1.centers <= box[:, 1]).all()


def test_lift_batch_rejects_wrong_dimension():
    basis = vdp_monomial_basis()
    with pytest.raises(ValueError, match="dimension"):
        lift_batch(basis, np.zeros((4, 3)))


def test_numba_and_numpy_paths_agree():
    # the flag is read at import, so the fallback runs in a subprocess
    script = (
        "import numpy as np\n"
        "from tubekoop.lifting import lift_batch, make_thin_plate_basis, vdp_monomial_basis\n"
        "rng = np.random.default_rng(5)\n"
        "X2 = rng.normal(size=(30, 2)); X3 = rng.normal(size=(30, 3))\n"
        "tp = make_thin_plate_basis(20, [[-2, 2]] * 3, seed=9)\n"
        "np.save('tp.npy', lift_batch(tp, X3))\n"
        "np.save('mono.npy', lift_batch(vdp_monomial_basis(), X2))\n"
    )
    import os
    import tempfile

    with tempfile.TemporaryDirectory() as tmp:
        for disable in ("0", "1"):
            env = dict(os.environ, TUBEKOOP_DISABLE_NUMBA=disable)
            subprocess.run([sys.executable, "-c", script], cwd=tmp, env=env, check=True)
            suffix = "_plain" if disable == "1" else "_jit"
            for name in ("tp", "mono"):
                os.rename(os.path.join(tmp, f"{name}.npy"),
                          os.path.join(tmp, f"{name}{suffix}.npy"))
        for name in ("tp", "mono"):
            a = np.load(os.path.join(tmp, f"{name}_jit.npy"))
            b = np.load(os.path.join(tmp, f"{name}_plain.npy"))
            np.testing.assert_allclose(a, b, rtol=1e-13, atol=1e-13)
