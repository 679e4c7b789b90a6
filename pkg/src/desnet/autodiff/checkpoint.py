"""Checkpoint files: a text manifest plus a raw little-endian float32 blob.

``<prefix>.manifest``::

    # desnet checkpoint 1
    meta <key> <json value>
    tensor <name> <shape as d0,d1,...> <byte offset>

``<prefix>.bin`` holds the tensors back to back in manifest order.
"""

import json

import numpy as np

HEADER = "# desnet checkpoint 1"


def save(prefix, arrays, meta=None):
    """Write ``arrays`` (ordered name -> array) and JSON-serialisable ``meta``."""
    lines = [HEADER]
    for key, val in (meta or {}).items():
        if any(c.isspace() for c in key):
            raise ValueError("meta key %r contains whitespace" % key)
        lines.append("meta %s %s" % (key, json.dumps(val, separators=(",", ":"))))
    offset = 0
    blobs = []
    for name, arr in arrays.items():
        if any(c.isspace() for c in name):
            raise ValueError("tensor name %r contains whitespace" % name)
        a = np.asarray(arr, dtype="<f4")
        shape = ",".join(str(d) for d in a.shape) or "scalar"
        lines.append("tensor %s %s %d" % (name, shape, offset))
        blobs.append(a.tobytes())
        offset += a.nbytes
    with open(prefix + ".bin", "wb") as fh:
        for b in blobs:
            fh.write(b)
    with open(prefix + ".manifest", "w") as fh:
        fh.write("\n".join(lines) + "\n")


def load(prefix):
    """Return ``(arrays, meta)``; arrays are float32 in manifest order."""
    with open(prefix + ".manifest") as fh:
        lines = fh.read().splitlines()
    if not lines or lines[0] != HEADER:
        raise ValueError("%s.manifest: not a desnet checkpoint" % prefix)
    with open(prefix + ".bin", "rb") as fh:
        blob = fh.read()
    arrays, meta = {}, {}
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        kind, rest = line.split(" ", 1)
        if kind == "meta":
            key, val = rest.split(" ", 1)
            meta[key] = json.loads(val)
        elif kind == "tensor":
            name, shape, offset = rest.split()
            dims = () if shape == "scalar" else tuple(int(d) for d in shape.split(","))
            n = int(np.prod(dims, dtype=np.int64))
            start = int(offset)
            if start + 4 * n > len(blob):
                raise ValueError("%s.manifest:%d: tensor %s overruns data file" % (prefix, lineno, name))
            arrays[name] = np.frombuffer(blob, dtype="<f4", count=n, offset=start).reshape(dims).copy()
        else:
            raise ValueError("%s.manifest:%d: unknown record %r" % (prefix, lineno, kind))
    return arrays, meta


def module_arrays(module):
    out = {name: p.data for name, p in module.named_parameters()}
    for name, b in module.named_buffers():
        out["buffer." + name] = b
    return out


def load_into_module(module, arrays):
    """Copy parameters and buffers from ``arrays`` into ``module`` (dtype preserved)."""
    for name, p in module.named_parameters():
        if name not in arrays:
            raise KeyError("checkpoint lacks parameter %r" % name)
        src = arrays[name]
        if src.shape != p.shape:
            raise ValueError("parameter %r: checkpoint shape %s != model shape %s" % (name, src.shape, p.shape))
        p.data = src.astype(p.dtype)
    for name, b in module.named_buffers():
        b[...] = arrays["buffer." + name]
