"""Binary model checkpoints.

Layout (little-endian): ``b"HERM"``, u32 version, u32 byte length of a UTF-8
JSON header, the header, then float32 values: the parameter vector followed
by the batch-norm running statistics. The header holds the architecture and
both counts.
"""
import json
import struct

import numpy as np

from .network import Architecture, FeatureModel

MAGIC = b"HERM"
VERSION = 1


def encode(model, extra=None):
    header = {"architecture": model.arch.to_dict(), "n_params": int(model.n_params),
              "n_buffers": int(model.n_buffers)}
    if extra:
        header["extra"] = extra
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    values = np.concatenate([model.theta, model.buffers]).astype("<f4")
    return MAGIC + struct.pack("<II", VERSION, len(blob)) + blob + values.tobytes()


def decode(raw):
    if raw[:4] != MAGIC:
        raise ValueError("not a model checkpoint")
    version, n = struct.unpack_from("<II", raw, 4)
    if version != VERSION:
        raise ValueError(f"unsupported checkpoint version {version}")
    header = json.loads(raw[12:12 + n].decode("utf-8"))
    values = np.frombuffer(raw, "<f4", offset=12 + n).astype(np.float64)
    n_params, n_buffers = header["n_params"], header["n_buffers"]
    if values.size != n_params + n_buffers:
        raise ValueError("checkpoint payload size does not match its header")
    arch = Architecture.from_dict(header["architecture"])
    model = FeatureModel(arch, values[:n_params], values[n_params:])
    return model, header.get("extra", {})


def save_checkpoint(path, model, extra=None):
    with open(path, "wb") as fh:
        fh.write(encode(model, extra))


def load_checkpoint(path):
    """Returns the stored FeatureModel (float32 values widened to float64)."""
    with open(path, "rb") as fh:
        return decode(fh.read())[0]
