"""Single-file model checkpoints with integrity checking.

Container layout (little-endian):
    8 bytes   magic "DTSNNCK\\0"
    u32       format version
    u64       length of the JSON header
    ...       JSON header: network spec, training-config echo, RNG seed,
              and a manifest of (layer, name, dtype, shape) for every array
    ...       raw array payloads, in manifest order
    32 bytes  SHA-256 over everything above

Writes are atomic (temp file in the target directory, then rename), so an
interrupted save never leaves a partial checkpoint behind.
"""

import hashlib
import json
import os
import struct
import tempfile
from dataclasses import dataclass

import numpy as np

from .errors import ChecksumError, DataFormatError, VersionError
from .kernels import BatchNormState
from .network import NetworkSpec, SnnInstance, spec_from_dict, spec_to_dict

MAGIC = b"DTSNNCK\x00"
VERSION = 1


@dataclass
class Checkpoint:
    """Everything needed to rebuild a trained instance bit-exactly."""

    spec: NetworkSpec
    params: list
    train_config: dict
    seed: int
    version: int = VERSION


def _collect_arrays(params):
    """Flatten instance parameters into (manifest, ordered arrays)."""
    manifest, arrays = [], []

    def add(layer, name, arr, extra=None):
        entry = {
            "layer": layer,
            "name": name,
            "dtype": arr.dtype.str,  # byte order explicit, e.g. '<f4'
            "shape": list(arr.shape),
        }
        if extra:
            entry.update(extra)
        manifest.append(entry)
        arrays.append(np.ascontiguousarray(arr))

    for i, p in enumerate(params):
        if isinstance(p, dict):
            for name in sorted(p):
                add(i, name, p[name])
        elif isinstance(p, BatchNormState):
            extra = {"momentum": p.momentum, "eps": p.eps}
            add(i, "gamma", p.gamma, extra)
            add(i, "beta", p.beta)
            add(i, "running_mean", p.running_mean)
            add(i, "running_var", p.running_var)
    return manifest, arrays


def save_checkpoint(path, ckpt):
    """Serialize and atomically write a checkpoint."""
    manifest, arrays = _collect_arrays(ckpt.params)
    header = json.dumps(
        {
            "spec": spec_to_dict(ckpt.spec),
            "train_config": ckpt.train_config,
            "seed": ckpt.seed,
            "num_layers": len(ckpt.params),
            "arrays": manifest,
        }
    ).encode()
    blob = bytearray()
    blob += MAGIC
    blob += struct.pack("<I", ckpt.version)
    blob += struct.pack("<Q", len(header))
    blob += header
    for arr in arrays:
        blob += arr.tobytes()
    digest = hashlib.sha256(bytes(blob)).digest()
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, suffix=".tmp")
    try:
        with os.fdopen(fd, "wb") as fh:
            fh.write(bytes(blob))
            fh.write(digest)
        os.replace(tmp, path)
    except BaseException:
        if os.path.exists(tmp):
            os.unlink(tmp)
        raise


def load_checkpoint(path):
    """Read, verify and reconstruct a Checkpoint."""
    with open(path, "rb") as fh:
        raw = fh.read()
    if len(raw) < len(MAGIC) + 12 + 32 or raw[: len(MAGIC)] != MAGIC:
        raise DataFormatError(f"{path}: not a dtsnn checkpoint (bad magic)")
    body, digest = raw[:-32], raw[-32:]
    if hashlib.sha256(body).digest() != digest:
        raise ChecksumError(f"{path}: checksum mismatch, file is corrupted")
    offset = len(MAGIC)
    (version,) = struct.unpack_from("<I", body, offset)
    offset += 4
    if version != VERSION:
        raise VersionError(
            f"{path}: checkpoint format version {version}, this build reads {VERSION}"
        )
    (header_len,) = struct.unpack_from("<Q", body, offset)
    offset += 8
    header = json.loads(body[offset : offset + header_len].decode())
    offset += header_len
    spec = spec_from_dict(header["spec"])
    params = [None] * header["num_layers"]
    bn_parts = {}
    for entry in header["arrays"]:
        dtype = np.dtype(entry["dtype"])
        count = int(np.prod(entry["shape"])) if entry["shape"] else 1
        arr = np.frombuffer(
            body, dtype=dtype, count=count, offset=offset
        ).reshape(entry["shape"]).copy()
        offset += count * dtype.itemsize
        i, name = entry["layer"], entry["name"]
        if name in ("gamma", "beta", "running_mean", "running_var"):
            slot = bn_parts.setdefault(i, {})
            slot[name] = arr
            if "momentum" in entry:
                slot["momentum"] = entry["momentum"]
                slot["eps"] = entry["eps"]
        else:
            if params[i] is None:
                params[i] = {}
            params[i][name] = arr
    for i, parts in bn_parts.items():
        params[i] = BatchNormState(**parts)
    return Checkpoint(
        spec=spec,
        params=params,
        train_config=header["train_config"],
        seed=header["seed"],
        version=version,
    )


def instance_from_checkpoint(ckpt):
    """Bind checkpointed weights to a fresh inference instance."""
    return SnnInstance(spec=ckpt.spec, params=ckpt.params)
