"""Binary container for numeric artifacts: JSON header + f32 blob.

Layout: u32 little-endian header length, UTF-8 JSON header, then all arrays
concatenated as little-endian float32 in the order declared by the header's
"arrays" list of {"name", "shape"} entries.
"""

import json
import struct

import numpy as np


def write_blob(path, header, arrays):
    """arrays: list of (name, ndarray); shapes recorded in the header."""
    doc = dict(header)
    doc["arrays"] = [{"name": name, "shape": list(np.shape(a))}
                     for name, a in arrays]
    payload = json.dumps(doc, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(struct.pack("<I", len(payload)))
        fh.write(payload)
        for _, a in arrays:
            fh.write(np.ascontiguousarray(a, dtype="<f4").tobytes())


def read_blob(path):
    """Returns (header dict, {name: float64 ndarray})."""
    with open(path, "rb") as fh:
        raw = fh.read()
    (hlen,) = struct.unpack_from("<I", raw, 0)
    header = json.loads(raw[4:4 + hlen].decode("utf-8"))
    out = {}
    off = 4 + hlen
    for spec in header["arrays"]:
        shape = tuple(spec["shape"])
        count = int(np.prod(shape)) if shape else 1
        a = np.frombuffer(raw, dtype="<f4", count=count, offset=off)
        out[spec["name"]] = a.reshape(shape).astype(np.float64)
        off += 4 * count
    return header, out
