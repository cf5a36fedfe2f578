"""Versioned on-disk format for named model parameters.

Layout: one UTF-8 JSON header line holding the format version, optional
metadata and a manifest of (name, shape) pairs, followed by each
parameter's values as row-major little-endian float64, in manifest
order.  Manifest order is sorted by name so files are byte-stable.
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np

from .autodiff import Tensor

FORMAT_NAME = "bevplan-params"
FORMAT_VERSION = 1


def save_params(path: str | Path, params: dict[str, Tensor], meta: dict | None = None):
    names = sorted(params)
    header = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "meta": meta or {},
        "manifest": [[name, list(params[name].data.shape)] for name in names],
    }
    path = Path(path)
    tmp = path.with_suffix(path.suffix + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(json.dumps(header, sort_keys=True).encode("utf-8"))
        fh.write(b"\n")
        for name in names:
            fh.write(np.ascontiguousarray(params[name].data, dtype="<f8").tobytes())
    os.replace(tmp, path)


def load_params(path: str | Path, requires_grad: bool = True) -> tuple[dict[str, Tensor], dict]:
    """Load a parameter file; returns (named tensors, metadata)."""
    with open(path, "rb") as fh:
        header_line = fh.readline()
        header = json.loads(header_line.decode("utf-8"))
        if header.get("format") != FORMAT_NAME:
            raise ValueError(f"not a {FORMAT_NAME} file: {path}")
        if header.get("version") != FORMAT_VERSION:
            raise ValueError(f"unsupported parameter format version {header.get('version')}")
        params: dict[str, Tensor] = {}
        for name, shape in header["manifest"]:
            count = int(np.prod(shape)) if shape else 1
            buf = fh.read(count * 8)
            if len(buf) != count * 8:
                raise ValueError(f"truncated parameter file at {name!r}")
            arr = np.frombuffer(buf, dtype="<f8").astype(np.float64).reshape(shape)
            params[name] = Tensor(arr, requires_grad=requires_grad)
    return params, header.get("meta", {})
