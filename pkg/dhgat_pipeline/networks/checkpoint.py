import io
import json
from pathlib import Path
from typing import Any, Dict, Optional, Tuple, Union

import numpy as np
import torch
from torch import nn

from ..utils.errors import PipelineError
from ..utils.logging import logger
from .diff_core import DTYPE

MANIFEST_KEY = "__manifest__"


class CheckpointError(PipelineError):
    def __init__(self, message: str, path: Union[str, Path]):
        super().__init__(f"{path}: {message}")
        self.path = str(path)


def save_checkpoint(model: nn.Module, path: Union[str, Path], manifest: Dict[str, Any]) -> None:
    """Named little-endian float64 arrays plus a JSON manifest in one .npz archive."""
    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    arrays = {
        name: np.ascontiguousarray(tensor.detach().cpu().numpy(), dtype="<f8")
        for name, tensor in model.state_dict().items()
    }
    arrays[MANIFEST_KEY] = np.array(json.dumps(manifest, sort_keys=True))
    buffer = io.BytesIO()
    np.savez(buffer, **arrays)
    path.write_bytes(buffer.getvalue())
    logger.info(f"Saved checkpoint with {len(arrays) - 1} tensors to {path}")


def load_checkpoint(path: Union[str, Path]) -> Tuple[Dict[str, torch.Tensor], Dict[str, Any]]:
    path = Path(path)
    if not path.exists():
        raise CheckpointError("checkpoint not found", path)
    try:
        with np.load(path, allow_pickle=False) as archive:
            if MANIFEST_KEY not in archive.files:
                raise CheckpointError("archive has no manifest", path)
            manifest = json.loads(str(archive[MANIFEST_KEY]))
            tensors = {
                name: torch.as_tensor(archive[name].astype(np.float64), dtype=DTYPE)
                for name in archive.files if name != MANIFEST_KEY
            }
    except (OSError, ValueError) as e:
        raise CheckpointError(f"unreadable checkpoint ({e})", path) from e
    return tensors, manifest


def restore_checkpoint(
    model: nn.Module,
    path: Union[str, Path],
    expected_hash: Optional[str] = None,
) -> Dict[str, Any]:
    """Load tensors into model in place; returns the manifest."""
    tensors, manifest = load_checkpoint(path)
    if manifest.get("model") not in (None, getattr(model, "kind", None)):
        raise CheckpointError(f"checkpoint holds a {manifest['model']!r} model, not {model.kind!r}", path)
    if expected_hash and manifest.get("config_hash") != expected_hash:
        logger.warning(f"Checkpoint {path} was written under a different config hash")

    own = model.state_dict()
    missing = sorted(set(own) - set(tensors))
    unexpected = sorted(set(tensors) - set(own))
    if missing or unexpected:
        raise CheckpointError(f"tensor names differ (missing {missing}, unexpected {unexpected})", path)
    for name, tensor in tensors.items():
        if tuple(tensor.shape) != tuple(own[name].shape):
            raise CheckpointError(f"{name} has shape {tuple(tensor.shape)}, model expects {tuple(own[name].shape)}", path)
    model.load_state_dict(tensors)
    return manifest
