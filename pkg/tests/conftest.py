import numpy as np
import pytest

from modbias import dataset as ds


def central_diff(f, x, h=1e-6):
    """Central finite difference of a scalar function at every entry of x."""
    x = np.asarray(x, dtype=np.float64)
    grad = np.zeros_like(x)
    flat = x.reshape(-1)
    out = grad.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + h
        hi = f(x)
        flat[i] = orig - h
        lo = f(x)
        flat[i] = orig
        out[i] = (hi - lo) / (2.0 * h)
    return grad


def rel_err(a, b):
    a = np.asarray(a, dtype=np.float64)
    b = np.asarray(b, dtype=np.float64)
    denom = max(1.0, np.abs(a).max(), np.abs(b).max())
    return np.abs(a - b).max() / denom


@pytest.fixture(scope="session")
def tiny_root(tmp_path_factory):
    """A small paired dataset (iid + ood) sharing one seed."""
    root = tmp_path_factory.mktemp("tinydata")
    for regime in ("iid", "ood"):
        train, test = ds.build_dataset(regime=regime, seed=11, rho=0.9,
                                       n_train=600, n_test=240)
        ds.write_dataset(str(root / regime), train, test)
    return root


@pytest.fixture(scope="session")
def tiny_iid(tiny_root):
    return ds.load_dataset(str(tiny_root / "iid"))


@pytest.fixture(scope="session")
def tiny_ood(tiny_root):
    return ds.load_dataset(str(tiny_root / "ood"))
