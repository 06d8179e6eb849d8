"""Checkpoint archive: a zip of named float32 arrays plus metadata.

The format is deliberately plain so checkpoints stay inspectable and
portable: every model parameter is stored little-endian float32 under its
dot-separated module path, optimizer moments live under a reserved
``__optim__.`` prefix, and ``__format_version__`` guards compatibility.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np
import torch
from torch import nn

FORMAT_VERSION = 1

_VERSION_KEY = "__format_version__"
_ITERATION_KEY = "__iteration__"
_OPTIM_PREFIX = "__optim__."


class CheckpointMismatchError(ValueError):
    """Checkpoint does not fit the model it is being loaded into."""


def save_checkpoint(
    path: str | Path,
    model: nn.Module,
    optimizer: torch.optim.Optimizer | None = None,
    iteration: int = 0,
) -> None:
    """Write model (and optionally optimizer) state to ``path``.

    All tensors are stored as little-endian float32, which matches the
    training dtype exactly, so a save/load round trip is bit-identical.
    """
    arrays: dict[str, np.ndarray] = {
        _VERSION_KEY: np.array(FORMAT_VERSION, dtype="<i8"),
        _ITERATION_KEY: np.array(int(iteration), dtype="<i8"),
    }
    for name, tensor in model.state_dict().items():
        arrays[name] = tensor.detach().cpu().numpy().astype("<f4")

    if optimizer is not None:
        name_of = {param: name for name, param in model.named_parameters()}
        for group in optimizer.param_groups:
            for param in group["params"]:
                state = optimizer.state.get(param)
                if not state:
                    continue
                name = name_of[param]
                for key, value in state.items():
                    tensor = value if torch.is_tensor(value) else torch.tensor(float(value))
                    arrays[f"{_OPTIM_PREFIX}{name}.{key}"] = (
                        tensor.detach().cpu().numpy().astype("<f4")
                    )

    path = Path(path)
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "wb") as handle:
        np.savez(handle, **arrays)


def load_checkpoint(
    path: str | Path,
    model: nn.Module,
    optimizer: torch.optim.Optimizer | None = None,
) -> int:
    """Restore state from ``path`` into ``model`` (and optimizer).

    Returns:
        The iteration count stored in the checkpoint.

    Raises:
        CheckpointMismatchError: wrong format version, or the parameter
            names/shapes do not line up with the model; the message lists
            every offending entry.
    """
    with np.load(path) as archive:
        arrays = {key: archive[key] for key in archive.files}

    if _VERSION_KEY not in arrays:
        raise CheckpointMismatchError(f"{path}: missing {_VERSION_KEY} field")
    version = int(arrays.pop(_VERSION_KEY))
    if version != FORMAT_VERSION:
        raise CheckpointMismatchError(
            f"{path}: format version {version}, this build reads {FORMAT_VERSION}"
        )
    iteration = int(arrays.pop(_ITERATION_KEY, 0))

    optim_arrays = {
        key[len(_OPTIM_PREFIX) :]: value
        for key, value in arrays.items()
        if key.startswith(_OPTIM_PREFIX)
    }
    param_arrays = {
        key: value for key, value in arrays.items() if not key.startswith(_OPTIM_PREFIX)
    }

    expected = model.state_dict()
    problems = []
    for name in sorted(set(expected) - set(param_arrays)):
        problems.append(f"missing from checkpoint: {name} {tuple(expected[name].shape)}")
    for name in sorted(set(param_arrays) - set(expected)):
        problems.append(f"not in model: {name} {param_arrays[name].shape}")
    for name in sorted(set(expected) & set(param_arrays)):
        want = tuple(expected[name].shape)
        have = param_arrays[name].shape
        if want != have:
            problems.append(f"shape mismatch: {name} model {want} vs checkpoint {have}")
    if problems:
        raise CheckpointMismatchError(f"{path}: " + "; ".join(problems))

    model.load_state_dict(
        {name: torch.from_numpy(arr.copy()) for name, arr in param_arrays.items()}
    )

    if optimizer is not None and optim_arrays:
        param_of = dict(model.named_parameters())
        grouped: dict[str, dict[str, torch.Tensor]] = {}
        for key, arr in optim_arrays.items():
            name, state_key = key.rsplit(".", 1)
            grouped.setdefault(name, {})[state_key] = torch.from_numpy(arr.copy())
        for name, state in grouped.items():
            if name not in param_of:
                raise CheckpointMismatchError(f"{path}: optimizer state for unknown param {name}")
            optimizer.state[param_of[name]] = state

    return iteration
