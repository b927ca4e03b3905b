"""Binary checkpoint container (layout documented in docs/formats.md).

    magic   8 bytes   b"PSLCKPT\\0"
    version uint32 LE
    hlen    uint64 LE
    header  hlen bytes of UTF-8 JSON (sorted keys)
    payload float32 LE arrays, C order, at the offsets listed in the header
"""
from __future__ import annotations

import json
import struct
from pathlib import Path

import numpy as np
import torch

from .errors import DataError

MAGIC = b"PSLCKPT\0"
VERSION = 1
_F32 = np.dtype("<f4")


def _registry():
    from .baselines.n2v import UNet, UNetConfig
    from .network import NetworkConfig, PSLNet

    return {"psl": (NetworkConfig, PSLNet), "n2v": (UNetConfig, UNet)}


def model_kind(net) -> str:
    for kind, (_, cls) in _registry().items():
        if isinstance(net, cls):
            return kind
    raise TypeError(f"no checkpoint kind registered for {type(net).__name__}")


def write_arrays(path, arrays: dict[str, np.ndarray], header: dict) -> None:
    entries, offset = [], 0
    blobs = []
    for name, arr in arrays.items():
        data = np.ascontiguousarray(arr, dtype=_F32)
        entries.append({"name": name, "shape": list(data.shape), "offset": offset})
        blobs.append(data.tobytes())
        offset += data.nbytes
    header = dict(header, arrays=entries, payload_bytes=offset)
    hbytes = json.dumps(header, sort_keys=True).encode("utf-8")
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as fh:
        fh.write(MAGIC)
        fh.write(struct.pack("<IQ", VERSION, len(hbytes)))
        fh.write(hbytes)
        for blob in blobs:
            fh.write(blob)
    tmp.replace(path)


def read_arrays(path) -> tuple[dict, dict[str, np.ndarray]]:
    try:
        raw = Path(path).read_bytes()
    except OSError as exc:
        raise DataError(f"cannot read checkpoint {path}: {exc}") from exc
    if raw[:8] != MAGIC:
        raise DataError(f"{path}: not a checkpoint file (bad magic)")
    version, hlen = struct.unpack_from("<IQ", raw, 8)
    if version != VERSION:
        raise DataError(f"{path}: unsupported checkpoint version {version}")
    start = 8 + 12
    header = json.loads(raw[start:start + hlen].decode("utf-8"))
    base = start + hlen
    if len(raw) - base != header["payload_bytes"]:
        raise DataError(f"{path}: truncated payload")
    arrays = {}
    for e in header["arrays"]:
        count = int(np.prod(e["shape"], dtype=np.int64))
        arr = np.frombuffer(raw, dtype=_F32, count=count, offset=base + e["offset"])
        arrays[e["name"]] = arr.reshape(e["shape"]).astype(np.float32)
    return header, arrays


def save_checkpoint(path, net, iteration: int | None = None, extra: dict[str, np.ndarray] | None = None,
                    meta: dict | None = None) -> None:
    """Write parameters (and optional extra arrays such as optimizer moments)."""
    iteration = net.iteration if iteration is None else iteration
    arrays = {k: v.detach().cpu().numpy() for k, v in net.state_dict().items()}
    for k, v in (extra or {}).items():
        arrays[k] = v
    header = {
        "model": model_kind(net),
        "config": net.config.model_dump(),
        "fingerprint": net.config.fingerprint(),
        "iteration": int(iteration),
        "meta": meta or {},
    }
    write_arrays(path, arrays, header)


def load_checkpoint(path, with_extra: bool = False):
    """Rebuild the network stored at ``path``.

    Returns the network, or ``(net, header, extra_arrays)`` when
    ``with_extra`` is set.
    """
    header, arrays = read_arrays(path)
    try:
        config_cls, net_cls = _registry()[header["model"]]
    except KeyError:
        raise DataError(f"{path}: unknown model kind {header.get('model')!r}") from None
    config = config_cls(**header["config"])
    if config.fingerprint() != header["fingerprint"]:
        raise DataError(f"{path}: config fingerprint mismatch")
    net = net_cls(config)
    state = net.state_dict()
    missing = set(state) - set(arrays)
    if missing:
        raise DataError(f"{path}: missing arrays {sorted(missing)}")
    loaded = {}
    for k, ref in state.items():
        if tuple(arrays[k].shape) != tuple(ref.shape):
            raise DataError(f"{path}: array {k} has shape {arrays[k].shape}, expected {tuple(ref.shape)}")
        loaded[k] = torch.from_numpy(arrays[k].copy())
    net.load_state_dict(loaded)
    net.iteration = header["iteration"]
    if not with_extra:
        return net
    extra = {k: v for k, v in arrays.items() if k not in state}
    return net, header, extra
