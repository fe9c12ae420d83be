"""Model checkpoints.

A checkpoint is an uncompressed NumPy ``.npz`` archive:

* ``__meta__`` -- UTF-8 JSON as a ``uint8`` array with keys ``format``
  (``"multistream-checkpoint"``), ``version`` (1), ``model`` (the
  ``ModelConfig`` echo) and ``extra`` (free-form, e.g. training metadata).
* one float64 array per parameter, keyed by its dotted name, plus
  ``<bn>.state.running_mean`` / ``<bn>.state.running_var`` for every
  initialized batch-norm site.

Values are stored bit-exactly, so save -> load -> forward reproduces outputs.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .errors import FormatError
from .model import ModelConfig, MultiStreamEncoder

FORMAT = "multistream-checkpoint"
VERSION = 1


def save_checkpoint(path, model: MultiStreamEncoder, extra: dict | None = None):
    meta = {"format": FORMAT, "version": VERSION,
            "model": model.config.to_dict(), "extra": extra or {}}
    arrays = model.state_dict()
    if "__meta__" in arrays:
        raise FormatError("parameter name collides with the metadata key")
    arrays["__meta__"] = np.frombuffer(json.dumps(meta, sort_keys=True).encode(), dtype=np.uint8)
    tmp = f"{os.fspath(path)}.tmp"
    with open(tmp, "wb") as fh:
        np.savez(fh, **arrays)
    os.replace(tmp, path)


def load_checkpoint(path) -> tuple[MultiStreamEncoder, dict]:
    """Return ``(model, extra)``; the model is left in inference mode."""
    try:
        archive = np.load(path, allow_pickle=False)
    except (OSError, ValueError) as exc:
        raise FormatError(f"{path}: not a checkpoint archive ({exc})") from exc
    with archive:
        if "__meta__" not in archive.files:
            raise FormatError(f"{path}: missing checkpoint metadata")
        meta = json.loads(archive["__meta__"].tobytes().decode())
        if meta.get("format") != FORMAT:
            raise FormatError(f"{path}: unexpected format {meta.get('format')!r}")
        if meta.get("version") != VERSION:
            raise FormatError(f"{path}: unsupported checkpoint version {meta.get('version')!r}")
        state = {k: archive[k] for k in archive.files if k != "__meta__"}
    model = MultiStreamEncoder(ModelConfig.from_dict(meta["model"]))
    model.load_state_dict(state)
    model.eval()
    return model, meta.get("extra", {})
