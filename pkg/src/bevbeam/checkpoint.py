"""Checkpoint files: every named parameter, batchnorm stats, optimizer state,
and a config hash packed as .bvt entries inside one zip archive."""

from __future__ import annotations

import hashlib
import json
import zipfile
from dataclasses import asdict
from pathlib import Path

import numpy as np

from .data import tensor_from_bytes, tensor_to_bytes
from .errors import FormatError
from .model import ModelConfig, ModelParams, build_model_params

_ZIP_DATE = (1980, 1, 1, 0, 0, 0)  # fixed timestamps keep archives reproducible


def config_hash(cfg: ModelConfig) -> str:
    payload = json.dumps(asdict(cfg), sort_keys=True).encode()
    return hashlib.sha256(payload).hexdigest()[:16]


def _write_entry(zf: zipfile.ZipFile, name: str, payload: bytes) -> None:
    info = zipfile.ZipInfo(name, date_time=_ZIP_DATE)
    zf.writestr(info, payload)


def save_checkpoint(path, params: ModelParams, optimizer_state=None,
                    meta: dict | None = None) -> None:
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    header = {
        "config": asdict(params.config),
        "config_hash": config_hash(params.config),
    }
    if meta:
        header.update(meta)
    if optimizer_state is not None:
        header["step"] = optimizer_state.step
    with zipfile.ZipFile(path, "w", compression=zipfile.ZIP_STORED) as zf:
        _write_entry(zf, "meta.json", json.dumps(header, sort_keys=True).encode())
        for name, tensor in sorted(params.named_parameters().items()):
            _write_entry(zf, f"params/{name}.bvt", tensor_to_bytes(tensor))
        for name, state in sorted(params.named_states().items()):
            _write_entry(zf, f"states/{name}.mean.bvt", tensor_to_bytes(state.running_mean))
            _write_entry(zf, f"states/{name}.var.bvt", tensor_to_bytes(state.running_var))
            _write_entry(zf, f"states/{name}.count.bvt",
                         tensor_to_bytes(np.asarray(float(state.batches_tracked))))
        if optimizer_state is not None:
            for name in sorted(optimizer_state.m):
                _write_entry(zf, f"opt/{name}.m.bvt",
                             tensor_to_bytes(optimizer_state.m[name]))
                _write_entry(zf, f"opt/{name}.v.bvt",
                             tensor_to_bytes(optimizer_state.v[name]))


def load_checkpoint(path, dtype=np.float32):
    """Restore (params, meta) from a checkpoint archive; bit-exact tensors."""
    path = Path(path)
    try:
        return _load_checkpoint_inner(path, dtype)
    except zipfile.BadZipFile as exc:
        raise FormatError(f"{path}: corrupt checkpoint archive ({exc})") from exc
    except FileNotFoundError as exc:
        raise FormatError(f"{path}: not a checkpoint archive ({exc})") from exc


def _load_checkpoint_inner(path: Path, dtype):
    with zipfile.ZipFile(path) as zf:
        names = set(zf.namelist())
        if "meta.json" not in names:
            raise FormatError(f"{path}: missing meta.json")
        meta = json.loads(zf.read("meta.json"))
        cfg = ModelConfig(**meta["config"])
        params = build_model_params(cfg, seed=0, dtype=dtype)
        for name, tensor in params.named_parameters().items():
            entry = f"params/{name}.bvt"
            if entry not in names:
                raise FormatError(f"{path}: missing parameter entry {entry}")
            stored = tensor_from_bytes(zf.read(entry), source=f"{path}:{entry}")
            if stored.shape != tensor.shape:
                raise FormatError(
                    f"{path}: {name} has shape {stored.shape}, expected {tensor.shape}")
            tensor.data = stored.data.astype(tensor.dtype, copy=False)
        for name, state in params.named_states().items():
            mean = tensor_from_bytes(zf.read(f"states/{name}.mean.bvt"), source=name)
            var = tensor_from_bytes(zf.read(f"states/{name}.var.bvt"), source=name)
            count = tensor_from_bytes(zf.read(f"states/{name}.count.bvt"), source=name)
            state.running_mean = mean.data.astype(state.running_mean.dtype, copy=False)
            state.running_var = var.data.astype(state.running_var.dtype, copy=False)
            state.batches_tracked = int(count.data)
    return params, meta


def load_optimizer_state(path, state) -> None:
    """Restore AdamW moment buffers in place (names must match)."""
    with zipfile.ZipFile(Path(path)) as zf:
        names = set(zf.namelist())
        for name in state.m:
            m_entry, v_entry = f"opt/{name}.m.bvt", f"opt/{name}.v.bvt"
            if m_entry in names and v_entry in names:
                state.m[name] = tensor_from_bytes(zf.read(m_entry), source=m_entry).data
                state.v[name] = tensor_from_bytes(zf.read(v_entry), source=v_entry).data


def parameter_digest(params: ModelParams) -> str:
    """Order-stable hash of all parameter payloads (for change detection)."""
    digest = hashlib.sha256()
    for name, tensor in sorted(params.named_parameters().items()):
        digest.update(name.encode())
        digest.update(tensor.data.tobytes())
    return digest.hexdigest()
