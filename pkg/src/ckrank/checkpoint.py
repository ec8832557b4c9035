"""Parameter checkpoints: JSON manifest + concatenated little-endian payloads.

Layout: magic ``CKPT`` | u32 format version | u64 manifest length |
manifest JSON (utf-8) | raw parameter payloads at the offsets the manifest
declares. Round-trips are bit-exact; loading verifies magic, version, and
payload sizes.
"""

import json
import struct

import numpy as np

from .errors import IndexFormatError

MAGIC = b"CKPT"
VERSION = 1

_DTYPES = {"<f4": np.dtype("<f4"), "<f8": np.dtype("<f8")}


def _wire_dtype(arr):
    if arr.dtype == np.float32:
        return "<f4"
    if arr.dtype == np.float64:
        return "<f8"
    raise IndexFormatError(f"unsupported checkpoint dtype {arr.dtype}")


def save_checkpoint(path, config_dict, config_hash, params, stats):
    """params: name -> Tensor (or ndarray); stats: name -> float."""
    entries = []
    payloads = []
    offset = 0
    for name in sorted(params):
        arr = np.asarray(getattr(params[name], "data", params[name]))
        if not arr.flags["C_CONTIGUOUS"]:
            # keep 0-d shapes intact; ascontiguousarray would promote to (1,)
            arr = np.ascontiguousarray(arr)
        wire = _wire_dtype(arr)
        buf = arr.astype(_DTYPES[wire], copy=False).tobytes()
        entries.append({"name": name, "shape": list(arr.shape), "dtype": wire,
                        "offset": offset, "nbytes": len(buf)})
        payloads.append(buf)
        offset += len(buf)
    manifest = json.dumps({
        "format_version": VERSION,
        "config": config_dict,
        "config_hash": config_hash,
        "params": entries,
        "stats": dict(stats),
    }).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(manifest)))
        fh.write(manifest)
        for buf in payloads:
            fh.write(buf)


def load_checkpoint(path):
    """Returns (config_dict, config_hash, arrays name->ndarray, stats dict)."""
    with open(path, "rb") as fh:
        blob = fh.read()
    if blob[:4] != MAGIC:
        raise IndexFormatError(f"{path}: not a checkpoint file (bad magic)")
    version = struct.unpack_from("<I", blob, 4)[0]
    if version != VERSION:
        raise IndexFormatError(f"{path}: unsupported checkpoint version {version}")
    mlen = struct.unpack_from("<Q", blob, 8)[0]
    header_end = 16 + mlen
    manifest = json.loads(blob[16:header_end].decode("utf-8"))
    payload = blob[header_end:]
    arrays = {}
    for entry in manifest["params"]:
        dtype = _DTYPES.get(entry["dtype"])
        if dtype is None:
            raise IndexFormatError(f"{path}: unknown payload dtype {entry['dtype']}")
        lo, hi = entry["offset"], entry["offset"] + entry["nbytes"]
        if hi > len(payload):
            raise IndexFormatError(f"{path}: truncated payload for {entry['name']}")
        arr = np.frombuffer(payload[lo:hi], dtype=dtype).reshape(entry["shape"])
        arrays[entry["name"]] = arr.astype(arr.dtype.newbyteorder("="), copy=True)
    return manifest["config"], manifest["config_hash"], arrays, manifest["stats"]


def save_model(model, path):
    save_checkpoint(path, model.config.to_dict(), model.config.config_hash(),
                    model.parameters(), model.running_stats())


def load_model(path, vocab):
    """Rebuild a CKModel from a checkpoint; returns it in eval mode."""
    from .model import CKModel, ModelConfig

    config_dict, config_hash, arrays, stats = load_checkpoint(path)
    config = ModelConfig.from_dict(config_dict)
    if config.config_hash() != config_hash:
        raise IndexFormatError(f"{path}: config hash mismatch")
    model = CKModel(config, vocab)
    params = model.parameters()
    if set(params) != set(arrays):
        missing = set(params) ^ set(arrays)
        raise IndexFormatError(f"{path}: parameter set mismatch: {sorted(missing)}")
    for name, tensor in params.items():
        arr = arrays[name]
        if tuple(arr.shape) != tuple(tensor.shape):
            raise IndexFormatError(f"{path}: shape mismatch for {name}: "
                                   f"{arr.shape} vs {tuple(tensor.shape)}")
        tensor.data[...] = arr
    model.load_running_stats(stats)
    model.eval()
    return model
