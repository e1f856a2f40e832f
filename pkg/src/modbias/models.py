"""From-scratch MLP and LeNet-style feature extractors with manual backprop.

Both models map flattened 28x28x3 pixels to D-dimensional features; the
class weight matrix W (10 x D) rides along in the parameter dict and is
consumed by the loss kernels. Everything is float64.

Convolution backend selection: the environment variable MODBIAS_BACKEND
picks "numba" (compiled direct loops) or "numpy" (im2col + BLAS); the
default "auto" takes numba when importable. Both produce equal results to
float64 rounding.
"""

import os
import struct

import numpy as np

from . import _conv_numpy
from .errors import BadDimensions, BadMagic, ShapeMismatch, StaleCache, Truncated

INPUT_DIM = 28 * 28 * 3
N_CLASSES = 10
DEFAULT_HIDDEN = 256
DEFAULT_FEATURES = 64

_MLP_ORDER = ("W1", "b1", "W2", "b2", "W")
_LENET_ORDER = ("c1", "cb1", "c2", "cb2", "f1", "fb1", "f2", "fb2", "W")
_KIND_CODES = {"mlp": 0, "lenet": 1}
_CODE_KINDS = {v: k for k, v in _KIND_CODES.items()}

_backend = None


def resolve_backend(name=None):
    """Return the active conv backend module ("numba" or "numpy")."""
    global _backend
    if name is None:
        if _backend is not None:
            return _backend
        name = os.environ.get("MODBIAS_BACKEND", "auto")
    if name == "numpy":
        _backend = _conv_numpy
    elif name == "numba":
        from . import _conv_numba
        _backend = _conv_numba
    elif name == "auto":
        try:
            from . import _conv_numba
            _backend = _conv_numba
        except ImportError:
            _backend = _conv_numpy
    else:
        raise BadDimensions(f"unknown backend {name!r}")
    return _backend


def backend_name():
    mod = resolve_backend()
    return "numba" if mod.__name__.endswith("numba") else "numpy"


def set_backend(name):
    """Force a conv backend ("numba", "numpy", or "auto"). For tests."""
    global _backend
    _backend = None
    if name is not None:
        resolve_backend(name)


def init_params(kind, seed, d_feat=DEFAULT_FEATURES, hidden=DEFAULT_HIDDEN):
    """Fan-in-scaled uniform weights, zero biases, deterministic per seed.

    The MLP uses bound 1/sqrt(fan_in); the LeNet uses the ReLU-gain bound
    sqrt(6/fan_in) on conv and fc layers, which keeps early epochs healthy
    for every seed.
    """
    if d_feat < 2 or hidden < 1:
        raise BadDimensions(f"d_feat={d_feat}, hidden={hidden}")
    rng = np.random.default_rng(seed)

    def u(shape, fan, gain=1.0):
        b = gain / np.sqrt(fan)
        return rng.uniform(-b, b, shape)

    if kind == "mlp":
        return {
            "W1": u((hidden, INPUT_DIM), INPUT_DIM), "b1": np.zeros(hidden),
            "W2": u((d_feat, hidden), hidden), "b2": np.zeros(d_feat),
            "W": u((N_CLASSES, d_feat), d_feat),
        }
    if kind == "lenet":
        g = np.sqrt(6.0)
        return {
            "c1": u((6, 3, 5, 5), 3 * 25, g), "cb1": np.zeros(6),
            "c2": u((16, 6, 5, 5), 6 * 25, g), "cb2": np.zeros(16),
            "f1": u((120, 256), 256, g), "fb1": np.zeros(120),
            "f2": u((d_feat, 120), 120, g), "fb2": np.zeros(d_feat),
            "W": u((N_CLASSES, d_feat), d_feat),
        }
    raise BadDimensions(f"unknown model kind {kind!r}")


def param_kind(params):
    return "lenet" if "c1" in params else "mlp"


def _pool2(x):
    B, C, H, W = x.shape
    return x.reshape(B, C, H // 2, 2, W // 2, 2).mean(axis=(3, 5))


def _unpool2(dy):
    return np.repeat(np.repeat(dy, 2, axis=2), 2, axis=3) * 0.25


def forward(params, pixels):
    """Features (B, D) plus the cache consumed by backward."""
    x = np.asarray(pixels, dtype=np.float64)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != INPUT_DIM:
        raise ShapeMismatch(f"pixels {x.shape} vs (B, {INPUT_DIM})")
    if param_kind(params) == "mlp":
        z1 = x @ params["W1"].T + params["b1"]
        a1 = np.maximum(z1, 0)
        f = a1 @ params["W2"].T + params["b2"]
        return f, ("mlp", x, z1, a1)
    conv = resolve_backend()
    B = x.shape[0]
    img = np.ascontiguousarray(x.reshape(B, 28, 28, 3).transpose(0, 3, 1, 2))
    z1 = conv.conv2d_fwd(img, params["c1"], params["cb1"])   # B,6,24,24
    a1 = np.maximum(z1, 0)
    p1 = _pool2(a1)                                          # B,6,12,12
    z2 = conv.conv2d_fwd(p1, params["c2"], params["cb2"])    # B,16,8,8
    a2 = np.maximum(z2, 0)
    p2 = _pool2(a2)                                          # B,16,4,4
    flat = p2.reshape(B, -1)
    z3 = flat @ params["f1"].T + params["fb1"]
    a3 = np.maximum(z3, 0)
    f = a3 @ params["f2"].T + params["fb2"]
    return f, ("lenet", img, z1, p1, z2, flat, z3, a3)


def backward(params, cache, dfeat):
    """Parameter gradients (head W excluded; loss kernels own it)."""
    dfeat = np.asarray(dfeat, dtype=np.float64)
    if dfeat.ndim == 1:
        dfeat = dfeat[None, :]
    kind = cache[0]
    if kind != param_kind(params):
        raise StaleCache(f"cache from {kind} used with {param_kind(params)}")
    if kind == "mlp":
        _, x, z1, a1 = cache
        if dfeat.shape[0] != x.shape[0]:
            raise StaleCache(f"batch {dfeat.shape[0]} vs cached {x.shape[0]}")
        g = {"W2": dfeat.T @ a1, "b2": dfeat.sum(0)}
        dz1 = (dfeat @ params["W2"]) * (z1 > 0)
        g["W1"] = dz1.T @ x
        g["b1"] = dz1.sum(0)
        return g
    conv = resolve_backend()
    _, img, z1, p1, z2, flat, z3, a3 = cache
    if dfeat.shape[0] != img.shape[0]:
        raise StaleCache(f"batch {dfeat.shape[0]} vs cached {img.shape[0]}")
    B = img.shape[0]
    g = {"f2": dfeat.T @ a3, "fb2": dfeat.sum(0)}
    dz3 = (dfeat @ params["f2"]) * (z3 > 0)
    g["f1"] = dz3.T @ flat
    g["fb1"] = dz3.sum(0)
    dp2 = (dz3 @ params["f1"]).reshape(B, 16, 4, 4)
    dz2 = _unpool2(dp2) * (z2 > 0)
    dp1, g["c2"], g["cb2"] = conv.conv2d_bwd(p1, params["c2"], dz2)
    dz1 = _unpool2(dp1) * (z1 > 0)
    # input gradient of the first conv is never consumed; skip its col2im
    _, g["c1"], g["cb1"] = conv.conv2d_bwd(img, params["c1"], dz1, False)
    return g


def features_and_scores(params, pixels, cosine=False, norm_epsilon=1e-12):
    """Class scores for prediction: raw logits f @ W.T, or cosine scores."""
    f, _ = forward(params, pixels)
    w = params["W"]
    if not cosine:
        return f, f @ w.T
    fn = np.linalg.norm(f, axis=1, keepdims=True) + norm_epsilon
    wn = np.linalg.norm(w, axis=1, keepdims=True) + norm_epsilon
    return f, (f / fn) @ (w / wn).T


def save_checkpoint(path, params, seed=0):
    """Little-endian header (magic, kind, dims, seed) + flat float64 arrays."""
    kind = param_kind(params)
    order = _MLP_ORDER if kind == "mlp" else _LENET_ORDER
    with open(path, "wb") as fh:
        fh.write(b"MBC1")
        fh.write(struct.pack("<Bq", _KIND_CODES[kind], int(seed)))
        fh.write(struct.pack("<I", len(order)))
        for name in order:
            arr = np.ascontiguousarray(params[name], dtype=np.float64)
            fh.write(struct.pack("<I", arr.ndim))
            fh.write(struct.pack(f"<{arr.ndim}I", *arr.shape))
            fh.write(arr.tobytes())


def load_checkpoint(path):
    """Inverse of save_checkpoint: (params, kind, seed)."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < 17 or raw[:4] != b"MBC1":
        raise BadMagic(f"{path} is not a checkpoint")
    kind_code, seed = struct.unpack("<Bq", raw[4:13])
    if kind_code not in _CODE_KINDS:
        raise BadMagic(f"unknown model kind code {kind_code}")
    kind = _CODE_KINDS[kind_code]
    n_arrays = struct.unpack("<I", raw[13:17])[0]
    order = _MLP_ORDER if kind == "mlp" else _LENET_ORDER
    if n_arrays != len(order):
        raise Truncated(f"expected {len(order)} arrays, header says {n_arrays}")
    params = {}
    off = 17
    for name in order:
        if off + 4 > len(raw):
            raise Truncated("array header")
        ndim = struct.unpack("<I", raw[off:off + 4])[0]
        off += 4
        if off + 4 * ndim > len(raw):
            raise Truncated("array dims")
        shape = struct.unpack(f"<{ndim}I", raw[off:off + 4 * ndim])
        off += 4 * ndim
        count = int(np.prod(shape, dtype=np.int64)) if ndim else 1
        nbytes = count * 8
        if off + nbytes > len(raw):
            raise Truncated(f"array payload for {name}")
        params[name] = np.frombuffer(
            raw[off:off + nbytes], dtype="<f8").reshape(shape).copy()
        off += nbytes
    return params, kind, seed
