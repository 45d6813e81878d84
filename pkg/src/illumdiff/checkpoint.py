"""Checkpoint container.

A checkpoint is an uncompressed ``.npz`` (zip of ``.npy`` arrays) so it can
be read without this package:

``__meta__``
    UTF-8 JSON as a ``uint8`` array with keys ``format_version``,
    ``model_config``, ``schedule_config``, ``param_names`` (in module
    registration order) and ``extra``.
``param/<name>``
    one float32 array per entry of the model's ``state_dict``.

Parameter names follow the module tree, e.g.
``decoder.2.prompt.gps.scans.3.gate_a.weight``; the trailing index of
``scans`` is the scan direction value (TL_BR=0, BR_TL=1, TR_BL=2, BL_TR=3).
"""

from __future__ import annotations

import json
import os
from pathlib import Path

import numpy as np
import torch

from .config import apply_to_dataclass
from .diffusion import ScheduleConfig
from .model import ModelConfig, RestorationTransformer

FORMAT_VERSION = 1


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(path, model: RestorationTransformer, schedule_cfg: ScheduleConfig, extra=None) -> Path:
    path = Path(path)
    state = model.state_dict()
    meta = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "schedule_config": schedule_cfg.to_dict(),
        "param_names": list(state),
        "extra": extra or {},
    }
    arrays = {"__meta__": np.frombuffer(json.dumps(meta).encode(), dtype=np.uint8)}
    for name, tensor in state.items():
        arrays[f"param/{name}"] = tensor.detach().cpu().to(torch.float32).numpy()
    path.parent.mkdir(parents=True, exist_ok=True)
    tmp = path.with_name(path.name + ".tmp")
    try:
        with open(tmp, "wb") as fh:
            np.savez(fh, **arrays)
        os.replace(tmp, path)
    except OSError as exc:
        raise CheckpointError(f"cannot write checkpoint {path}: {exc}") from exc
    return path


def read_meta(path) -> dict:
    with np.load(path) as data:
        return json.loads(bytes(data["__meta__"]).decode())


def _config_from_dict(instance, values: dict):
    as_text = {k: ",".join(map(str, v)) if isinstance(v, list) else str(v) for k, v in values.items()}
    return apply_to_dataclass(instance, as_text)


def load_checkpoint(path, dtype=torch.float32):
    """Return ``(model, schedule_config, meta)``."""
    path = Path(path)
    try:
        data = np.load(path)
    except (OSError, ValueError) as exc:
        raise CheckpointError(f"cannot read checkpoint {path}: {exc}") from exc
    with data:
        if "__meta__" not in data:
            raise CheckpointError(f"{path} has no __meta__ record")
        meta = json.loads(bytes(data["__meta__"]).decode())
        if meta.get("format_version") != FORMAT_VERSION:
            raise CheckpointError(f"{path}: unsupported format_version {meta.get('format_version')}")
        model_cfg = _config_from_dict(ModelConfig(), meta["model_config"])
        schedule_cfg = _config_from_dict(ScheduleConfig(), meta["schedule_config"])
        model = RestorationTransformer(model_cfg)
        expected = list(model.state_dict())
        if expected != meta["param_names"]:
            raise CheckpointError(f"{path}: parameter table does not match its model_config")
        state = {name: torch.from_numpy(data[f"param/{name}"].copy()) for name in expected}
    model.load_state_dict(state)
    model.to(dtype).eval()
    return model, schedule_cfg, meta
