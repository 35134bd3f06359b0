"""Self-describing model checkpoints.

An ``.npz`` archive holds a JSON header (format version, architecture tag and
fields, network specs) and the flat parameter arrays. Arrays are stored as raw
float64, so a save/load cycle is bitwise exact.
"""

from __future__ import annotations

import json
from pathlib import Path

import jax.numpy as jnp
import numpy as np

from nfqs.flow import Flow
from nfqs.qcnf import QCNF
from nfqs.qnvp import QNVP

FORMAT_VERSION = 1
ARCHS = {"qnvp": QNVP, "qcnf": QCNF}


def _tag(arch) -> str:
    for name, cls in ARCHS.items():
        if isinstance(arch, cls):
            return name
    raise TypeError(f"unknown architecture {type(arch).__name__}")


def _flatten(params) -> dict[str, np.ndarray]:
    if isinstance(params, dict):
        return {"F": np.asarray(params["F"])}
    out = {}
    for k, layer in enumerate(params):
        out[f"s_{k}"] = np.asarray(layer["s"])
        out[f"t_{k}"] = np.asarray(layer["t"])
    return out


def save_flow(flow: Flow, path) -> Path:
    path = Path(path)
    arch = flow.arch
    tag = _tag(arch)
    specs = {"s": arch.s_spec.to_dict(), "t": arch.t_spec.to_dict()} if tag == "qnvp" else {"F": arch.field_spec.to_dict()}
    meta = {"format_version": FORMAT_VERSION, "arch": tag, "arch_fields": arch.to_dict(), "mlp_specs": specs}
    with open(path, "wb") as fh:
        np.savez(fh, meta=np.array(json.dumps(meta)), **_flatten(flow.params))
    return path


def load_flow(path) -> Flow:
    with np.load(Path(path), allow_pickle=False) as data:
        meta = json.loads(str(data["meta"]))
        if meta.get("format_version") != FORMAT_VERSION:
            raise ValueError(f"unsupported checkpoint format {meta.get('format_version')!r}")
        tag = meta["arch"]
        if tag not in ARCHS:
            raise ValueError(f"unknown architecture tag {tag!r}")
        arch = ARCHS[tag].from_dict(meta["arch_fields"])
        if tag == "qcnf":
            params = {"F": jnp.asarray(data["F"])}
        else:
            params = [{"s": jnp.asarray(data[f"s_{k}"]), "t": jnp.asarray(data[f"t_{k}"])} for k in range(arch.depth)]
    return Flow(arch, params)
