"""Versioned, byte-deterministic checkpoint container.

One ``.npz`` file holding named float arrays (model weights, optimizer
moments) plus a JSON metadata blob (format version, iteration counter,
config snapshot, RNG state, tag vocabulary). Loading refuses version or
shape mismatches instead of silently reinterpreting.
"""

from __future__ import annotations

import io
import json
from pathlib import Path

import numpy as np
import torch

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def state_dict_to_arrays(prefix: str, sd: dict) -> dict[str, np.ndarray]:
    out = {}
    for name, tensor in sd.items():
        out[f"{prefix}/{name}"] = tensor.detach().cpu().numpy()
    return out


def arrays_to_state_dict(prefix: str, arrays: dict[str, np.ndarray]) -> dict[str, torch.Tensor]:
    plen = len(prefix) + 1
    # .copy() (not ascontiguousarray) so 0-d arrays stay 0-d
    return {
        k[plen:]: torch.from_numpy(v.copy())
        for k, v in arrays.items()
        if k.startswith(prefix + "/")
    }


def optimizer_to_arrays(prefix: str, opt: torch.optim.Optimizer) -> tuple[dict[str, np.ndarray], dict]:
    """Flatten optimizer state tensors into named arrays plus a JSON skeleton."""
    sd = opt.state_dict()
    arrays = {}
    meta = {"param_groups": sd["param_groups"], "state_keys": {}}
    for pid, st in sd["state"].items():
        keys = {}
        for k, v in st.items():
            if isinstance(v, torch.Tensor):
                arrays[f"{prefix}/{pid}/{k}"] = v.detach().cpu().numpy()
                keys[k] = "tensor"
            else:
                keys[k] = v
        meta["state_keys"][str(pid)] = keys
    return arrays, meta


def arrays_to_optimizer_state(prefix: str, arrays: dict[str, np.ndarray], meta: dict) -> dict:
    state = {}
    for pid_str, keys in meta["state_keys"].items():
        pid = int(pid_str)
        st = {}
        for k, v in keys.items():
            if v == "tensor":
                st[k] = torch.from_numpy(arrays[f"{prefix}/{pid}/{k}"].copy())
            else:
                st[k] = v
        state[pid] = st
    return {"state": state, "param_groups": meta["param_groups"]}


def save_checkpoint(path: str | Path, arrays: dict[str, np.ndarray], meta: dict):
    """Write arrays + metadata; byte-identical for identical inputs."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    meta = dict(meta)
    meta["format_version"] = FORMAT_VERSION
    blob = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    buf = io.BytesIO()
    np.savez(buf, __meta__=blob, **dict(sorted(arrays.items())))
    path.write_bytes(buf.getvalue())


def load_checkpoint(path: str | Path) -> tuple[dict[str, np.ndarray], dict]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError(f"checkpoint {path} does not exist")
    try:
        with np.load(path) as npz:
            arrays = {k: npz[k] for k in npz.files if k != "__meta__"}
            meta = json.loads(bytes(npz["__meta__"]).decode())
    except (OSError, ValueError, KeyError, json.JSONDecodeError) as e:
        raise CheckpointError(f"corrupted checkpoint {path}: {e}") from e
    version = meta.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} != supported {FORMAT_VERSION}"
        )
    return arrays, meta


def load_module_weights(module: torch.nn.Module, prefix: str, arrays: dict[str, np.ndarray]):
    """Strict, shape-checked weight restore into an existing module."""
    sd = arrays_to_state_dict(prefix, arrays)
    current = module.state_dict()
    if set(sd) != set(current):
        missing = sorted(set(current) - set(sd))
        extra = sorted(set(sd) - set(current))
        raise CheckpointError(f"parameter set mismatch: missing={missing}, extra={extra}")
    for k, v in sd.items():
        if tuple(v.shape) != tuple(current[k].shape):
            raise CheckpointError(
                f"shape mismatch for {prefix}/{k}: {tuple(v.shape)} vs {tuple(current[k].shape)}"
            )
    module.load_state_dict(sd)
