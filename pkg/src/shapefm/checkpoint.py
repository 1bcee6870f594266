"""Checkpoint serialization: config.json + manifest.json + weights.bin.

weights.bin is a flat little-endian float32 blob; manifest.json maps each
parameter name to its byte offset and shape. Round-trips are bit-exact.
"""

from __future__ import annotations

import json
from dataclasses import asdict, dataclass
from pathlib import Path

import numpy as np
import torch

from .errors import ValidationError
from .model import ModelConfig, ShapeModel
from .prototypes import PrototypeStore

FORMAT_VERSION = 1

PROTOTYPES_KEY = "prototypes"
PROTO_COUNTS_KEY = "prototype_update_counts"


@dataclass
class ModelCheckpoint:
    """All named parameter arrays (query + momentum + prototypes) plus config."""

    arrays: dict[str, np.ndarray]
    config: dict

    @property
    def format_version(self) -> int:
        return int(self.config.get("format_version", FORMAT_VERSION))

    @classmethod
    def from_model(
        cls,
        model: ShapeModel,
        store: PrototypeStore,
        extra_config: dict | None = None,
    ) -> "ModelCheckpoint":
        arrays = {
            name: tensor.detach().cpu().numpy().astype("<f4")
            for name, tensor in model.state_dict().items()
        }
        arrays[PROTOTYPES_KEY] = store.prototypes.cpu().numpy().astype("<f4")
        arrays[PROTO_COUNTS_KEY] = store.update_counts.cpu().numpy().astype("<f4")
        config = {
            "format_version": FORMAT_VERSION,
            "model": asdict(model.config),
            "num_classes": model.num_classes,
            "prototype_beta": store.beta,
        }
        if extra_config:
            config.update(extra_config)
        # normalize to JSON-safe values so save/load round-trips compare equal
        return cls(arrays=arrays, config=json.loads(json.dumps(config)))

    def model_config(self) -> ModelConfig:
        cfg = dict(self.config["model"])
        cfg["scales"] = tuple(tuple(pair) for pair in cfg["scales"])
        return ModelConfig(**cfg)

    def build_model(self) -> tuple[ShapeModel, PrototypeStore]:
        """Reconstruct the model and prototype store from the stored arrays."""
        model = ShapeModel(self.model_config(), num_classes=self.config.get("num_classes"))
        state = {}
        for name in model.state_dict():
            if name not in self.arrays:
                raise ValidationError(f"checkpoint missing parameter {name!r}")
            state[name] = torch.from_numpy(self.arrays[name].copy())
        model.load_state_dict(state, strict=True)
        store = PrototypeStore(
            torch.from_numpy(self.arrays[PROTOTYPES_KEY].copy()),
            beta=float(self.config.get("prototype_beta", 0.9)),
            update_counts=torch.from_numpy(
                self.arrays[PROTO_COUNTS_KEY].copy().astype(np.int64)
            ),
        )
        return model, store

    def save(self, directory: str | Path) -> Path:
        directory = Path(directory)
        directory.mkdir(parents=True, exist_ok=True)
        manifest = {}
        offset = 0
        blobs = []
        for name in sorted(self.arrays):
            arr = np.ascontiguousarray(self.arrays[name], dtype="<f4")
            manifest[name] = {"offset": offset, "shape": list(arr.shape)}
            blobs.append(arr.tobytes())
            offset += len(blobs[-1])
        (directory / "weights.bin").write_bytes(b"".join(blobs))
        with open(directory / "manifest.json", "w") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
        with open(directory / "config.json", "w") as fh:
            json.dump(self.config, fh, indent=2, sort_keys=True)
        return directory

    @classmethod
    def load(cls, directory: str | Path) -> "ModelCheckpoint":
        directory = Path(directory)
        for fname in ("config.json", "manifest.json", "weights.bin"):
            if not (directory / fname).is_file():
                raise ValidationError(f"not a checkpoint directory (missing {fname}): {directory}")
        with open(directory / "config.json") as fh:
            config = json.load(fh)
        if int(config.get("format_version", -1)) != FORMAT_VERSION:
            raise ValidationError(
                f"unsupported checkpoint format_version {config.get('format_version')!r}"
            )
        with open(directory / "manifest.json") as fh:
            manifest = json.load(fh)
        blob = (directory / "weights.bin").read_bytes()
        arrays = {}
        for name, entry in manifest.items():
            shape = tuple(entry["shape"])
            count = int(np.prod(shape)) if shape else 1
            arr = np.frombuffer(blob, dtype="<f4", count=count, offset=entry["offset"])
            arrays[name] = arr.reshape(shape).copy()
        return cls(arrays=arrays, config=config)
