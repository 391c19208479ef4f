"""Textual checkpoint container.

A checkpoint is a JSON document holding, per named :class:`LayerStack`, the
layer types, their constructor config, and every parameter/buffer array.
Arrays are stored as base64 of their little-endian float64 bytes, so a
save/load round trip is bit-exact and repeated saves are byte-identical.
"""

import base64
import json
from pathlib import Path

import numpy as np

from ..errors import ShapeError
from .layers import LAYER_TYPES, BatchNorm, GradReversal, LayerStack

FORMAT = "dann-amc-checkpoint"
VERSION = 1


def _encode(a: np.ndarray) -> dict:
    a = np.ascontiguousarray(a, dtype="<f8")
    return {"shape": list(a.shape), "dtype": "<f8", "data": base64.b64encode(a.tobytes()).decode("ascii")}


def _decode(d: dict) -> np.ndarray:
    raw = base64.b64decode(d["data"])
    return np.frombuffer(raw, dtype=d["dtype"]).astype(np.float64).reshape(d["shape"])


def stack_state(stack: LayerStack) -> dict:
    layers = []
    for layer in stack.layers:
        entry = {"type": layer.kind, "config": layer.config(), "arrays": {}}
        for p in layer.params():
            entry["arrays"][p.name] = _encode(p.value)
        for name, buf in layer.buffers().items():
            entry["arrays"][name] = _encode(buf)
        if isinstance(layer, GradReversal):
            entry["config"] = {"lam": layer.lam}
        layers.append(entry)
    return {"name": stack.name, "in_dim": stack.in_dim, "layers": layers}


def dumps(stacks: dict[str, LayerStack], meta: dict | None = None) -> str:
    doc = {
        "format": FORMAT,
        "version": VERSION,
        "meta": meta or {},
        "stacks": {name: stack_state(s) for name, s in stacks.items()},
    }
    return json.dumps(doc, sort_keys=True, indent=1)


def save(path, stacks: dict[str, LayerStack], meta: dict | None = None) -> None:
    Path(path).write_text(dumps(stacks, meta) + "\n")


def read(path) -> dict:
    doc = json.loads(Path(path).read_text())
    if doc.get("format") != FORMAT:
        raise ValueError(f"{path}: not a {FORMAT} file")
    if doc.get("version") != VERSION:
        raise ValueError(f"{path}: unsupported checkpoint version {doc.get('version')}")
    return doc


def build_stack(state: dict) -> LayerStack:
    layers = []
    for entry in state["layers"]:
        cls = LAYER_TYPES[entry["type"]]
        cfg = dict(entry["config"])
        if cls.kind == "linear":
            layer = cls(cfg["in_dim"], cfg["out_dim"])
        else:
            layer = cls(**cfg)
        layers.append(layer)
    stack = LayerStack(layers, state["in_dim"], name=state["name"])
    load_stack(stack, state)
    return stack


def load_stack(stack: LayerStack, state: dict) -> None:
    """Copy arrays from ``state`` into an existing stack, validating structure."""
    if len(state["layers"]) != len(stack.layers) or state["in_dim"] != stack.in_dim:
        raise ShapeError(f"checkpoint stack {state['name']!r} does not match {stack.name!r}")
    for i, (layer, entry) in enumerate(zip(stack.layers, state["layers"])):
        if entry["type"] != layer.kind:
            raise ShapeError(f"{stack.name} layer {i}: checkpoint has {entry['type']}, model has {layer.kind}")
        arrays = entry["arrays"]
        for p in layer.params():
            value = _decode(arrays[p.name])
            if value.shape != p.value.shape:
                raise ShapeError(f"{stack.name} layer {i} {p.name}: shape {value.shape} != {p.value.shape}")
            p.value = value.copy()
        if isinstance(layer, BatchNorm):
            layer.running_mean = _decode(arrays["running_mean"]).copy()
            layer.running_var = _decode(arrays["running_var"]).copy()
        if isinstance(layer, GradReversal):
            layer.lam = entry["config"]["lam"]
