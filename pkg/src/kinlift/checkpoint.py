"""Unified checkpoint: self-describing header + parameter blobs.

A checkpoint reloads into a model whose forward outputs are bit-exact,
including adapter wrapping, optimizer state, and the training RNG streams
needed for resume-equivalent continuation.
"""

from __future__ import annotations

import torch

from .model import LiftModel, ModelConfig

FORMAT_VERSION = 2


class CheckpointError(RuntimeError):
    pass


def save_checkpoint(
    path,
    model: LiftModel,
    step: int,
    run_config: dict,
    adapters_attached: bool,
    adapter_seed: int = 0,
    optimizer: torch.optim.Optimizer | None = None,
    rng_states: dict | None = None,
    extra: dict | None = None,
):
    payload = {
        "format_version": FORMAT_VERSION,
        "model_config": model.cfg.to_dict(),
        "run_config": run_config,
        "step": step,
        "adapters_attached": adapters_attached,
        "adapter_seed": adapter_seed,
        "model_state": model.state_dict(),
        "optimizer_state": optimizer.state_dict() if optimizer is not None else None,
        "rng_states": rng_states or {},
        "extra": extra or {},
    }
    torch.save(payload, path)


def load_checkpoint(path) -> dict:
    payload = torch.load(path, map_location="cpu", weights_only=False)
    version = payload.get("format_version")
    if version != FORMAT_VERSION:
        raise CheckpointError(
            f"checkpoint format version {version} != supported {FORMAT_VERSION}"
        )
    return payload


def restore_model(payload: dict) -> LiftModel:
    model = LiftModel(ModelConfig.from_dict(payload["model_config"]))
    if payload["adapters_attached"]:
        model.attach_adapters(seed=payload["adapter_seed"])
    model.load_state_dict(payload["model_state"])
    model.freeze_autoencoder()
    return model
