"""Versioned binary checkpoint container.

Layout: magic line, 16-byte ascii header length, UTF-8 JSON header, then the
raw tensor payloads concatenated in sorted-name order (row-major,
little-endian). The header records the format version, a metadata dict
(kind, network config, trainer state, ...) and the dtype/shape of every
tensor. JSON is emitted with sorted keys and fixed separators so a
save -> load -> save round trip is byte-identical.
"""

from __future__ import annotations

import json

import numpy as np
import torch

from .errors import ConfigurationError

__all__ = ["save_container", "load_container", "FORMAT_VERSION"]

FORMAT_VERSION = 1
_MAGIC = b"GKNETCKPT\n"

_DTYPES = {
    "float32": (torch.float32, np.float32),
    "float64": (torch.float64, np.float64),
    "int64": (torch.int64, np.int64),
}


def _dtype_name(t: torch.Tensor) -> str:
    for name, (tdt, _) in _DTYPES.items():
        if t.dtype == tdt:
            return name
    raise ConfigurationError(f"unsupported checkpoint dtype {t.dtype}")


def save_container(path, tensors: dict[str, torch.Tensor], meta: dict) -> None:
    names = sorted(tensors)
    header = {
        "format_version": FORMAT_VERSION,
        "meta": meta,
        "tensors": [
            {"name": n, "dtype": _dtype_name(tensors[n]), "shape": list(tensors[n].shape)}
            for n in names
        ],
    }
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode()
    with open(path, "wb") as fh:
        fh.write(_MAGIC)
        fh.write(f"{len(blob):016d}".encode())
        fh.write(blob)
        for n in names:
            fh.write(tensors[n].detach().contiguous().numpy().tobytes())


def load_container(path) -> tuple[dict[str, torch.Tensor], dict]:
    with open(path, "rb") as fh:
        if fh.read(len(_MAGIC)) != _MAGIC:
            raise ConfigurationError(f"{path}: not a checkpoint file")
        length = int(fh.read(16).decode())
        header = json.loads(fh.read(length).decode())
        if header.get("format_version") != FORMAT_VERSION:
            raise ConfigurationError(
                f"{path}: unsupported format version {header.get('format_version')}"
            )
        tensors: dict[str, torch.Tensor] = {}
        for entry in header["tensors"]:
            tdt, ndt = _DTYPES[entry["dtype"]]
            count = int(np.prod(entry["shape"])) if entry["shape"] else 1
            raw = fh.read(count * np.dtype(ndt).itemsize)
            arr = np.frombuffer(raw, dtype=ndt).reshape(entry["shape"]).copy()
            tensors[entry["name"]] = torch.from_numpy(arr)
    return tensors, header["meta"]
