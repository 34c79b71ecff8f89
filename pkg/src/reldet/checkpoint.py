"""Named-tensor checkpoint archive with a JSON manifest.

Layout: an 8-byte magic, an 8-byte little-endian header length, a canonical
JSON header describing the manifest and every tensor (name, dtype, shape,
offset), then the raw row-major little-endian tensor bytes.  Writing the same
tensors and manifest always produces identical bytes, so save -> load -> save
round-trips bit-exactly.
"""

from __future__ import annotations

import json

import numpy as np

MAGIC = b"RELDETC1"


def save_checkpoint(path, tensors: dict[str, np.ndarray], manifest: dict) -> None:
    names = sorted(tensors)
    entries = []
    offset = 0
    blobs = []
    for name in names:
        arr = np.asarray(tensors[name])
        if arr.dtype.byteorder == ">":
            arr = arr.astype(arr.dtype.newbyteorder("<"))
        blob = arr.tobytes(order="C")
        entries.append(
            {
                "name": name,
                "dtype": arr.dtype.name,
                "shape": list(arr.shape),
                "offset": offset,
                "nbytes": len(blob),
            }
        )
        offset += len(blob)
        blobs.append(blob)
    header = json.dumps(
        {"manifest": manifest, "tensors": entries}, sort_keys=True, separators=(",", ":")
    ).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(len(header).to_bytes(8, "little"))
        fh.write(header)
        for blob in blobs:
            fh.write(blob)


def load_checkpoint(path) -> tuple[dict[str, np.ndarray], dict]:
    with open(path, "rb") as fh:
        magic = fh.read(8)
        if magic != MAGIC:
            raise ValueError(f"{path}: not a checkpoint file (bad magic {magic!r})")
        header_len = int.from_bytes(fh.read(8), "little")
        header = json.loads(fh.read(header_len).decode("utf-8"))
        data = fh.read()
    tensors = {}
    for entry in header["tensors"]:
        blob = data[entry["offset"] : entry["offset"] + entry["nbytes"]]
        arr = np.frombuffer(blob, dtype=np.dtype(entry["dtype"])).reshape(entry["shape"])
        tensors[entry["name"]] = arr.copy()
    return tensors, header["manifest"]
