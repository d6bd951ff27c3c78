"""Binary checkpoint persistence for models and named tensor bundles.

Layout (all integers little-endian):

    bytes 0..7    magic  b"DMLABCK\\x00"
    bytes 8..11   format version (uint32)
    bytes 12..19  header length in bytes (uint64)
    header        UTF-8 JSON: kind, hyperparameters, schedule (denoiser
                  only), array directory (name, shape, offset, nbytes),
                  payload sha256
    payload       the arrays, concatenated, little-endian float32

Parameter arrays are float32 in memory, so the round trip is bit-exact.
The schedule rides in the JSON header (float64 survives the repr round
trip), keeping the payload uniformly `<f4` as the format promises.
"""

from __future__ import annotations

import hashlib
import json
import struct

import numpy as np

from .classifier import Classifier
from .codec import LatentCodec
from .diffusion import Denoiser, DiffusionSchedule
from .errors import CheckpointError
from .tensor import Float, RngStream, Tensor

MAGIC = b"DMLABCK\x00"
VERSION = 1


def _named_params(obj) -> dict:
    return {f"param{i:03d}": p.data for i, p in enumerate(obj.params)}


def _payload(arrays: dict) -> tuple[bytes, list]:
    directory = []
    chunks = []
    offset = 0
    for name, arr in arrays.items():
        arr = np.ascontiguousarray(arr, dtype=Float)
        raw = arr.astype("<f4", copy=False).tobytes()
        directory.append({"name": name, "shape": list(arr.shape),
                          "offset": offset, "nbytes": len(raw)})
        chunks.append(raw)
        offset += len(raw)
    return b"".join(chunks), directory


def _write(path, kind: str, hyper: dict, arrays: dict, schedule=None):
    payload, directory = _payload(arrays)
    header = {
        "kind": kind,
        "hyper": hyper,
        "arrays": directory,
        "payload_sha256": hashlib.sha256(payload).hexdigest(),
    }
    if schedule is not None:
        header["schedule"] = {"betas": [float(b) for b in schedule.betas]}
    blob = json.dumps(header, sort_keys=True).encode("utf-8")
    with open(path, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<I", VERSION))
        fh.write(struct.pack("<Q", len(blob)))
        fh.write(blob)
        fh.write(payload)


def _read(path) -> tuple[dict, dict]:
    with open(path, "rb") as fh:
        data = fh.read()
    if len(data) < 20 or data[:8] != MAGIC:
        raise CheckpointError(f"{path}: not a checkpoint file (bad magic)")
    (version,) = struct.unpack("<I", data[8:12])
    if version != VERSION:
        raise CheckpointError(
            f"{path}: format version {version}, expected {VERSION}")
    (hlen,) = struct.unpack("<Q", data[12:20])
    if len(data) < 20 + hlen:
        raise CheckpointError(
            f"{path}: truncated header (need {20 + hlen} bytes, have {len(data)})")
    try:
        header = json.loads(data[20:20 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as exc:
        raise CheckpointError(f"{path}: unreadable header ({exc})") from exc
    payload = data[20 + hlen:]
    expected = sum(d["nbytes"] for d in header["arrays"])
    if len(payload) < expected:
        raise CheckpointError(
            f"{path}: truncated payload (need {expected} bytes, have {len(payload)})")
    digest = hashlib.sha256(payload[:expected]).hexdigest()
    if digest != header["payload_sha256"]:
        raise CheckpointError(f"{path}: payload hash mismatch")
    arrays = {}
    for d in header["arrays"]:
        raw = payload[d["offset"]:d["offset"] + d["nbytes"]]
        arrays[d["name"]] = np.frombuffer(raw, dtype="<f4").reshape(
            d["shape"]).astype(Float)
    return header, arrays


def _restore_params(obj, arrays: dict):
    params = [Tensor(arrays[f"param{i:03d}"]) for i in range(len(obj.params))]
    for have, want in zip(params, obj.params):
        if have.data.shape != want.data.shape:
            raise CheckpointError(
                f"parameter shape mismatch: stored {have.data.shape}, "
                f"model wants {want.data.shape}")
    obj.set_params(params)


def save_checkpoint(path, obj, sched: DiffusionSchedule | None = None):
    """Serialize a Denoiser (with its schedule), LatentCodec, Classifier,
    or a plain dict of named float arrays."""
    if isinstance(obj, Denoiser):
        if sched is None:
            raise CheckpointError("denoiser checkpoints must carry a schedule")
        hyper = {"data_dim": obj.data_dim, "cond_dim": obj.cond_dim,
                 "time_dim": obj.time_dim, "hidden": obj.hidden,
                 "depth": obj.depth, "n_classes": obj.n_classes}
        _write(path, "denoiser", hyper, _named_params(obj), schedule=sched)
    elif isinstance(obj, LatentCodec):
        hyper = {"input_dim": obj.input_dim, "latent_dim": obj.latent_dim,
                 "hidden": obj.hidden}
        _write(path, "codec", hyper, _named_params(obj))
    elif isinstance(obj, Classifier):
        hyper = {"input_dim": obj.input_dim, "n_classes": obj.n_classes,
                 "hidden": obj.hidden, "depth": obj.depth}
        _write(path, "classifier", hyper, _named_params(obj))
    elif isinstance(obj, dict):
        _write(path, "tensors", {}, dict(obj))
    else:
        raise CheckpointError(f"cannot checkpoint object of type {type(obj)!r}")


def load_checkpoint(path):
    """Inverse of save_checkpoint.

    Returns (Denoiser, DiffusionSchedule) for denoiser checkpoints, the
    model object for codec/classifier ones, and a dict of arrays for
    tensor bundles.
    """
    header, arrays = _read(path)
    kind = header.get("kind")
    hyper = header.get("hyper", {})
    # construct with a throwaway stream, then overwrite every parameter
    rng = RngStream(0)
    if kind == "denoiser":
        model = Denoiser(hyper["data_dim"], rng, cond_dim=hyper["cond_dim"],
                         time_dim=hyper["time_dim"], hidden=hyper["hidden"],
                         depth=hyper["depth"], n_classes=hyper["n_classes"])
        _restore_params(model, arrays)
        sched = DiffusionSchedule(np.asarray(header["schedule"]["betas"]))
        return model, sched
    if kind == "codec":
        codec = LatentCodec(hyper["input_dim"], hyper["latent_dim"], rng,
                            hidden=hyper["hidden"])
        _restore_params(codec, arrays)
        return codec
    if kind == "classifier":
        clf = Classifier(hyper["input_dim"], hyper["n_classes"], rng,
                         hidden=hyper["hidden"], depth=hyper["depth"])
        _restore_params(clf, arrays)
        return clf
    if kind == "tensors":
        return arrays
    raise CheckpointError(f"{path}: unknown checkpoint kind {kind!r}")


def checkpoint_kind(path) -> str:
    header, _ = _read(path)
    return header.get("kind", "")


def file_sha256(path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()
