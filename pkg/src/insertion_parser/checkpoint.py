"""Single-file checkpoint archive.

Layout (a stored zip file)::

    manifest.json          format version, configs, vocabulary, step, metrics
    params/<name>          uint32 ndim, uint32 dims..., float32 data (little-endian, row-major)
"""

from __future__ import annotations

import json
import os
import struct
import tempfile
import zipfile
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
import torch

from .corpus import Vocabulary
from .model import InsertionParser, ModelConfig

FORMAT_VERSION = 1


def encode_array(a: np.ndarray) -> bytes:
    a = np.asarray(a, dtype="<f4")
    return struct.pack(f"<I{a.ndim}I", a.ndim, *a.shape) + a.tobytes(order="C")


def decode_array(blob: bytes) -> np.ndarray:
    (ndim,) = struct.unpack_from("<I", blob, 0)
    shape = struct.unpack_from(f"<{ndim}I", blob, 4)
    return np.frombuffer(blob, dtype="<f4", offset=4 + 4 * ndim).reshape(shape).copy()


@dataclass
class Checkpoint:
    params: dict                     # name -> float32 ndarray
    model_config: ModelConfig
    vocab: Vocabulary
    train_config: dict = field(default_factory=dict)
    step: int = 0
    metrics: dict = field(default_factory=dict)
    version: int = FORMAT_VERSION

    @classmethod
    def from_model(cls, model: InsertionParser, vocab: Vocabulary, train_config: dict | None = None,
                   step: int = 0, metrics: dict | None = None) -> "Checkpoint":
        params = {k: v.detach().cpu().float().numpy().copy() for k, v in model.state_dict().items()}
        return cls(params, model.cfg, vocab, dict(train_config or {}), step, dict(metrics or {}))

    def build_model(self) -> InsertionParser:
        model = InsertionParser(self.model_config, len(self.vocab.source_words), self.vocab.V)
        model.load_state_dict({k: torch.from_numpy(v) for k, v in self.params.items()})
        model.eval()
        return model

    def save(self, path) -> None:
        path = Path(path)
        manifest = {
            "format_version": self.version,
            "model_config": self.model_config.to_dict(),
            "train_config": self.train_config,
            "vocab": self.vocab.to_dict(),
            "step": self.step,
            "metrics": self.metrics,
            "params": sorted(self.params),
        }
        fd, tmp = tempfile.mkstemp(dir=path.parent or ".", prefix=path.name, suffix=".tmp")
        try:
            with os.fdopen(fd, "wb") as raw, zipfile.ZipFile(raw, "w", zipfile.ZIP_STORED) as zf:
                zf.writestr("manifest.json", json.dumps(manifest, indent=1, sort_keys=True))
                for name in sorted(self.params):
                    zf.writestr(f"params/{name}", encode_array(self.params[name]))
            os.replace(tmp, path)
        except BaseException:
            if os.path.exists(tmp):
                os.unlink(tmp)
            raise

    @classmethod
    def load(cls, path) -> "Checkpoint":
        with zipfile.ZipFile(path) as zf:
            manifest = json.loads(zf.read("manifest.json").decode("utf-8"))
            if manifest.get("format_version") != FORMAT_VERSION:
                raise ValueError(f"unsupported checkpoint version {manifest.get('format_version')}")
            params = {name: decode_array(zf.read(f"params/{name}")) for name in manifest["params"]}
        return cls(
            params=params,
            model_config=ModelConfig.from_dict(manifest["model_config"]),
            vocab=Vocabulary.from_dict(manifest["vocab"]),
            train_config=manifest.get("train_config", {}),
            step=manifest.get("step", 0),
            metrics=manifest.get("metrics", {}),
            version=manifest["format_version"],
        )


def load_model(path) -> tuple[InsertionParser, Checkpoint]:
    ckpt = Checkpoint.load(path)
    return ckpt.build_model(), ckpt


