"""Weight checkpoints: a JSON manifest naming every tensor (name, shape,
dtype, per section) next to one binary file holding the raw little-endian
float32 buffers concatenated in manifest order.

A checkpoint stem ``run/best`` produces ``run/best.json`` and
``run/best.bin``. Integer bookkeeping buffers (batch-norm step counters)
are not part of the format; they do not affect inference or fixed-momentum
training.
"""

from __future__ import annotations

import json
from pathlib import Path

import numpy as np
import torch
import torch.nn as nn

FORMAT_NAME = "chromoseg-checkpoint"
FORMAT_VERSION = 1


def _float_entries(module: nn.Module):
    for name, tensor in module.state_dict().items():
        if tensor.is_floating_point():
            yield name, tensor


def save_checkpoint(
    stem: str | Path, sections: dict[str, nn.Module], meta: dict | None = None
) -> tuple[Path, Path]:
    stem = Path(stem)
    stem.parent.mkdir(parents=True, exist_ok=True)
    manifest: dict = {
        "format": FORMAT_NAME,
        "version": FORMAT_VERSION,
        "meta": meta or {},
        "sections": {},
    }
    buffers: list[bytes] = []
    for section, module in sections.items():
        entries = []
        for name, tensor in _float_entries(module):
            array = tensor.detach().cpu().numpy().astype("<f4", copy=False)
            entries.append({"name": name, "shape": list(tensor.shape), "dtype": "float32"})
            buffers.append(array.tobytes())
        manifest["sections"][section] = entries
    manifest_path = stem.with_suffix(".json")
    weights_path = stem.with_suffix(".bin")
    with open(manifest_path, "w") as fh:
        # key order is load-bearing: buffers follow manifest order
        json.dump(manifest, fh, indent=2)
        fh.write("\n")
    with open(weights_path, "wb") as fh:
        for buf in buffers:
            fh.write(buf)
    return manifest_path, weights_path


def read_manifest(stem: str | Path) -> dict:
    with open(Path(stem).with_suffix(".json")) as fh:
        manifest = json.load(fh)
    if manifest.get("format") != FORMAT_NAME:
        raise ValueError(f"{stem}: not a {FORMAT_NAME} manifest")
    return manifest


def load_checkpoint(stem: str | Path, sections: dict[str, nn.Module]) -> dict:
    """Load buffers into the given modules; returns the manifest meta."""
    stem = Path(stem)
    manifest = read_manifest(stem)
    raw = Path(stem).with_suffix(".bin").read_bytes()
    offset = 0
    for section, entries in manifest["sections"].items():
        if section not in sections:
            offset += sum(
                int(np.prod(e["shape"])) * 4 for e in entries
            )
            continue
        module = sections[section]
        state = module.state_dict()
        for entry in entries:
            count = int(np.prod(entry["shape"]))
            array = np.frombuffer(raw, dtype="<f4", count=count, offset=offset).reshape(
                entry["shape"]
            )
            offset += count * 4
            name = entry["name"]
            if name not in state:
                raise KeyError(f"checkpoint entry {section}/{name} unknown to module")
            if list(state[name].shape) != entry["shape"]:
                raise ValueError(
                    f"shape mismatch for {section}/{name}: "
                    f"{entry['shape']} vs {list(state[name].shape)}"
                )
            with torch.no_grad():
                state[name].copy_(torch.from_numpy(array.copy()))
    return manifest.get("meta", {})
