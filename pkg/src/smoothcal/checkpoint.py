"""Model checkpoint serialization.

Binary layout (little-endian), followed by a JSON sidecar at ``<path>.json``
holding the training config and seed:

    magic   6 bytes  b"SMCAL1"
    u32     input_dim
    u32     number of hidden layers H
    u32*H   hidden layer widths
    u32     number of classes
    u8      activation (0 = relu)
    then per layer (input->output order): weight matrix rows (f64,
    row-major, fan_in x fan_out) followed by the bias vector (f64).
"""

from __future__ import annotations

import dataclasses
import json
import struct
from pathlib import Path

import numpy as np

from .errors import ConfigError
from .nn import ArchitectureSpec, NetworkModel, TrainConfig

MAGIC = b"SMCAL1"
_ACTIVATIONS = {"relu": 0}
_ACTIVATION_NAMES = {v: k for k, v in _ACTIVATIONS.items()}


def sidecar_path(path) -> Path:
    return Path(str(path) + ".json")


def save_checkpoint(model: NetworkModel, path, train_config: TrainConfig | None = None, extra: dict | None = None) -> None:
    arch = model.arch
    buf = bytearray()
    buf += MAGIC
    buf += struct.pack("<II", arch.input_dim, len(arch.hidden_layers))
    buf += struct.pack(f"<{len(arch.hidden_layers)}I", *arch.hidden_layers)
    buf += struct.pack("<IB", arch.num_classes, _ACTIVATIONS[arch.activation])
    for w, b in zip(model.weights, model.biases):
        buf += np.ascontiguousarray(w, dtype="<f8").tobytes()
        buf += np.ascontiguousarray(b, dtype="<f8").tobytes()
    Path(path).write_bytes(bytes(buf))

    sidecar = {
        "format": "smoothcal-checkpoint",
        "arch": dataclasses.asdict(arch),
        "rng_seed": model.rng_seed,
        "train_config": dataclasses.asdict(train_config) if train_config else None,
    }
    if extra:
        sidecar.update(extra)
    sidecar_path(path).write_text(json.dumps(sidecar, indent=2))


def load_checkpoint(path) -> tuple[NetworkModel, dict]:
    raw = Path(path).read_bytes()
    if raw[: len(MAGIC)] != MAGIC:
        raise ConfigError(f"{path}: not a smoothcal checkpoint (bad magic)")
    off = len(MAGIC)
    input_dim, n_hidden = struct.unpack_from("<II", raw, off)
    off += 8
    widths = struct.unpack_from(f"<{n_hidden}I", raw, off)
    off += 4 * n_hidden
    num_classes, act = struct.unpack_from("<IB", raw, off)
    off += 5
    arch = ArchitectureSpec(
        input_dim=input_dim,
        hidden_layers=widths,
        num_classes=num_classes,
        activation=_ACTIVATION_NAMES.get(act, "?"),
    )
    weights, biases = [], []
    for fin, fout in arch.layer_sizes:
        w = np.frombuffer(raw, dtype="<f8", count=fin * fout, offset=off).reshape(fin, fout)
        off += 8 * fin * fout
        b = np.frombuffer(raw, dtype="<f8", count=fout, offset=off)
        off += 8 * fout
        weights.append(np.ascontiguousarray(w))
        biases.append(np.ascontiguousarray(b))
    if off != len(raw):
        raise ConfigError(f"{path}: trailing bytes in checkpoint")

    sidecar = {}
    sp = sidecar_path(path)
    if sp.exists():
        sidecar = json.loads(sp.read_text())
    model = NetworkModel(
        arch=arch, weights=weights, biases=biases, rng_seed=int(sidecar.get("rng_seed", 0))
    )
    return model, sidecar
