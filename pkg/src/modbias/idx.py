"""IDX container parsing and writing.

The classic big-endian binary layout: 2 zero bytes, a dtype code, a rank
byte, rank × u32 dimensions, then the payload in C order. Only the u8 code
(0x08) is supported since both image and label files use it.
"""

import struct

import numpy as np

from .errors import BadMagic, DimMismatch, Truncated

_DTYPE_U8 = 0x08


def parse_idx(data):
    """Parse an IDX byte stream (or a path to one) into an ndarray.

    Image files (rank 3) come back as uint8 (n, rows, cols); label files
    (rank 1) as uint8 (n,). Raises BadMagic for a malformed magic word,
    Truncated when the payload is shorter than the declared dimensions
    imply.
    """
    if isinstance(data, (str, bytes)) and not isinstance(data, bytes):
        with open(data, "rb") as fh:
            data = fh.read()
    elif hasattr(data, "read"):
        data = data.read()
    if len(data) < 4:
        raise Truncated(f"header needs 4 bytes, got {len(data)}")
    zero, dtype_code, ndim = data[0] << 8 | data[1], data[2], data[3]
    if zero != 0 or dtype_code != _DTYPE_U8:
        raise BadMagic(f"magic 0x{int.from_bytes(data[:4], 'big'):08x}")
    if ndim == 0 or ndim > 3:
        raise BadMagic(f"unsupported rank {ndim}")
    header_len = 4 + 4 * ndim
    if len(data) < header_len:
        raise Truncated(f"header needs {header_len} bytes, got {len(data)}")
    dims = struct.unpack(f">{ndim}I", data[4:header_len])
    n_items = 1
    for d in dims:
        n_items *= d
    payload = data[header_len:]
    if len(payload) < n_items:
        raise Truncated(f"payload needs {n_items} bytes, got {len(payload)}")
    arr = np.frombuffer(payload[:n_items], dtype=np.uint8).reshape(dims)
    return arr.copy()


def write_idx(array, path):
    """Write a uint8 ndarray as an IDX file (big-endian dims)."""
    arr = np.ascontiguousarray(array, dtype=np.uint8)
    with open(path, "wb") as fh:
        fh.write(bytes([0, 0, _DTYPE_U8, arr.ndim]))
        fh.write(struct.pack(f">{arr.ndim}I", *arr.shape))
        fh.write(arr.tobytes())


def load_pair(images_path, labels_path):
    """Load an image/label IDX pair, validating shape agreement.

    Returns (images float64 (n, 28, 28) scaled to [0,1], labels uint8 (n,)).
    """
    images = parse_idx(images_path)
    labels = parse_idx(labels_path)
    if images.ndim != 3 or images.shape[1:] != (28, 28):
        raise DimMismatch(f"image dims {images.shape[1:]} != (28, 28)")
    if labels.ndim != 1 or len(labels) != len(images):
        raise DimMismatch(
            f"{len(images)} images vs {len(labels)} labels")
    return images.astype(np.float64) / 255.0, labels
