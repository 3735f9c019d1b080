"""Binary checkpoint: magic, version, JSON header, then named little-endian float32 tensors.

Layout::

    b"DIFFREP\\x00"  u32 version  u32 header_len  header (UTF-8 JSON)
    per tensor: u16 name_len, name, u8 ndim, u32 dims..., float32 data

The header's ``tensors`` table gives every record's byte offset relative to the
start of the tensor section, so readers can seek directly.
"""
from __future__ import annotations

import json
import struct
from dataclasses import dataclass, field
from pathlib import Path
from typing import Optional

import numpy as np
import torch

from ..formula import VOCAB_HASH
from .model import DiffusionModel, ModelConfig
from .schedule import NoiseSchedule

MAGIC = b"DIFFREP\x00"
VERSION = 1


class CorruptCheckpoint(ValueError):
    pass


@dataclass
class Checkpoint:
    model: DiffusionModel
    schedule: NoiseSchedule
    step: int = 0
    header: dict = field(default_factory=dict)
    optimizer_state: Optional[dict] = None

    def load_optimizer(self, optimizer: torch.optim.Optimizer) -> None:
        """Restore Adam moments saved alongside the weights, keyed by parameter name."""
        if not self.optimizer_state:
            return
        index = {id(p): name for name, p in self.model.named_parameters()}
        state = optimizer.state_dict()
        params = [p for g in optimizer.param_groups for p in g["params"]]
        for i, p in enumerate(params):
            saved = self.optimizer_state.get(index[id(p)])
            if saved is not None:
                state["state"][i] = {k: v.clone() for k, v in saved.items()}
        optimizer.load_state_dict(state)


def _record(name: str, array: np.ndarray) -> bytes:
    raw = name.encode("utf-8")
    out = struct.pack("<H", len(raw)) + raw + struct.pack("<B", array.ndim)
    out += struct.pack(f"<{array.ndim}I", *array.shape)
    return out + np.ascontiguousarray(array, dtype="<f4").tobytes()


def _tensors(model: DiffusionModel, optimizer: Optional[torch.optim.Optimizer]):
    for name, p in model.state_dict().items():
        yield name, p.detach().cpu().numpy()
    if optimizer is None:
        return
    names = {id(p): n for n, p in model.named_parameters()}
    for p in (p for g in optimizer.param_groups for p in g["params"]):
        st = optimizer.state.get(p)
        if not st:
            continue
        for key in ("exp_avg", "exp_avg_sq"):
            yield f"optim/{names[id(p)]}/{key}", st[key].detach().cpu().numpy()


def write_tensor_file(path: str | Path, header: dict, tensors) -> None:
    """Write ``header`` plus ``(name, array)`` records; fills in the header's tensor table."""
    records, table, offset = [], [], 0
    for name, array in tensors:
        rec = _record(name, array)
        table.append({"name": name, "shape": list(array.shape), "offset": offset, "bytes": len(rec)})
        records.append(rec)
        offset += len(rec)
    header = dict(header, tensors=table, vocab_hash=VOCAB_HASH)
    blob = json.dumps(header, sort_keys=True, separators=(",", ":")).encode("utf-8")
    path = Path(path)
    tmp = path.with_name(path.name + ".tmp")
    with open(tmp, "wb") as f:
        f.write(MAGIC + struct.pack("<II", VERSION, len(blob)) + blob)
        for rec in records:
            f.write(rec)
    tmp.replace(path)


def read_tensor_file(path: str | Path) -> tuple[dict, dict[str, torch.Tensor]]:
    header, body = read_header(path)
    if header.get("vocab_hash") != VOCAB_HASH:
        raise CorruptCheckpoint(f"{path}: vocabulary hash mismatch")
    out = {}
    for entry in header.get("tensors", []):
        name, arr = _read_record(body, entry)
        out[name] = torch.from_numpy(arr.astype(np.float32))
    return header, out


def save_checkpoint(path: str | Path, model: DiffusionModel, schedule: NoiseSchedule, step: int = 0,
                    optimizer: Optional[torch.optim.Optimizer] = None, lineage: Optional[dict] = None,
                    extra: Optional[dict] = None) -> None:
    optim_steps = {}
    if optimizer is not None:
        names = {id(p): n for n, p in model.named_parameters()}
        for p in (p for g in optimizer.param_groups for p in g["params"]):
            st = optimizer.state.get(p)
            if st:
                optim_steps[names[id(p)]] = float(st["step"])
    header = {
        "kind": "diffusion",
        "config": model.cfg.to_json(),
        "schedule": schedule.to_json(),
        "lineage": lineage or {},
        "step": int(step),
        "optimizer_steps": optim_steps,
        "extra": extra or {},
    }
    write_tensor_file(path, header, _tensors(model, optimizer))


def read_header(path: str | Path) -> tuple[dict, bytes]:
    data = Path(path).read_bytes()
    if len(data) < 16 or data[:8] != MAGIC:
        raise CorruptCheckpoint(f"{path}: not a checkpoint (bad magic)")
    version, hlen = struct.unpack_from("<II", data, 8)
    if version != VERSION:
        raise CorruptCheckpoint(f"{path}: unsupported version {version}")
    try:
        header = json.loads(data[16:16 + hlen].decode("utf-8"))
    except (UnicodeDecodeError, json.JSONDecodeError) as err:
        raise CorruptCheckpoint(f"{path}: unreadable header") from err
    return header, data[16 + hlen:]


def _read_record(body: bytes, entry: dict) -> tuple[str, np.ndarray]:
    pos = entry["offset"]
    try:
        (name_len,) = struct.unpack_from("<H", body, pos)
        pos += 2
        name = body[pos:pos + name_len].decode("utf-8")
        pos += name_len
        (ndim,) = struct.unpack_from("<B", body, pos)
        pos += 1
        shape = struct.unpack_from(f"<{ndim}I", body, pos)
        pos += 4 * ndim
    except struct.error as err:
        raise CorruptCheckpoint("truncated tensor record") from err
    count = int(np.prod(shape)) if ndim else 1
    if pos + 4 * count > len(body):
        raise CorruptCheckpoint(f"tensor {name!r} is truncated")
    if name != entry["name"] or list(shape) != entry["shape"]:
        raise CorruptCheckpoint(f"tensor table disagrees with record {name!r}")
    arr = np.frombuffer(body, dtype="<f4", count=count, offset=pos).reshape(shape)
    return name, arr


def load_checkpoint(path: str | Path) -> Checkpoint:
    header, tensors = read_tensor_file(path)
    if header.get("kind", "diffusion") != "diffusion":
        raise CorruptCheckpoint(f"{path}: holds a {header.get('kind')} model, not a diffusion model")
    model = DiffusionModel(ModelConfig.from_json(header["config"]))
    schedule = NoiseSchedule.from_json(header["schedule"])
    state, optim = {}, {}
    for name, tensor in tensors.items():
        if name.startswith("optim/"):
            pname, key = name[len("optim/"):].rsplit("/", 1)
            optim.setdefault(pname, {})[key] = tensor
        else:
            state[name] = tensor
    try:
        model.load_state_dict(state)
    except RuntimeError as err:
        raise CorruptCheckpoint(f"{path}: weights do not match config") from err
    model.eval()
    for pname, steps in header.get("optimizer_steps", {}).items():
        if pname in optim:
            optim[pname]["step"] = torch.tensor(steps)
    return Checkpoint(model, schedule, int(header.get("step", 0)), header, optim or None)
