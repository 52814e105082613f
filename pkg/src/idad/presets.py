"""Named training presets and config-file handling.

Each bundled model has a desk preset sized to finish on a laptop CPU in
minutes and a paper preset matching the published full-scale
hyperparameters (hours of GPU time; provided for completeness, not
exercised by the test suite). Config files are JSON renderings of
TrainConfig; CLI flags override individual keys and the effective
config is echoed next to every artifact.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .nets import EncoderConfig
from .train import TrainConfig

_PK_LOG_MEAN = tuple(np.log([1.0, 0.1, 20.0]))
_PK_LOG_STD = (np.sqrt(0.05),) * 3


def _encoder(model_id: str, scale: str) -> EncoderConfig:
    if model_id == "lg":
        return EncoderConfig(
            design_dim=1, outcome_dim=1, param_dim=1, encoding_dim=16,
            pair_hidden=(32, 32), pooling="attention",
            emitter_hidden=(32,), critic_head_hidden=(32,), param_hidden=(32,),
            design_transform=(-2.0, 2.0),
        )
    if model_id == "locfin":
        if scale == "paper":
            return EncoderConfig(
                design_dim=2, outcome_dim=1, param_dim=4, encoding_dim=64,
                pair_hidden=(64, 512), pooling="attention",
                emitter_hidden=(256, 64), critic_head_hidden=(1024, 512, 512),
                param_hidden=(16, 64, 512),
            )
        return EncoderConfig(
            design_dim=2, outcome_dim=1, param_dim=4, encoding_dim=32,
            pair_hidden=(64, 128), pooling="attention",
            emitter_hidden=(64, 32), critic_head_hidden=(128, 64),
            param_hidden=(32, 64),
        )
    if model_id == "pk":
        if scale == "paper":
            return EncoderConfig(
                design_dim=1, outcome_dim=1, param_dim=3, encoding_dim=32,
                pair_hidden=(64, 512), pooling="attention",
                emitter_hidden=(256, 32), critic_head_hidden=(512, 256, 512),
                param_hidden=(8, 64, 512),
                design_transform=(0.0, 24.0),
                param_log=True, param_shift=_PK_LOG_MEAN, param_scale=_PK_LOG_STD,
            )
        return EncoderConfig(
            design_dim=1, outcome_dim=1, param_dim=3, encoding_dim=16,
            pair_hidden=(32, 64), pooling="attention",
            emitter_hidden=(32, 16), critic_head_hidden=(64, 32),
            param_hidden=(16, 32),
            design_transform=(0.0, 24.0),
            param_log=True, param_shift=_PK_LOG_MEAN, param_scale=_PK_LOG_STD,
            design_scale=24.0, outcome_scale=10.0,
        )
    if model_id == "sir":
        if scale == "paper":
            return EncoderConfig(
                design_dim=1, outcome_dim=1, param_dim=2, encoding_dim=32,
                pair_hidden=(8, 64, 512), pooling="recurrent",
                emitter_hidden=(16,), critic_head_hidden=(16,),
                param_hidden=(8, 64, 512),
                design_transform=(0.0, 100.0),
                param_log=True, param_shift=(0.5, 0.1), param_scale=(0.5, 0.5),
            )
        return EncoderConfig(
            design_dim=1, outcome_dim=1, param_dim=2, encoding_dim=16,
            pair_hidden=(32, 64), pooling="recurrent",
            emitter_hidden=(16,), critic_head_hidden=(32,),
            param_hidden=(16, 32),
            design_transform=(0.0, 100.0),
            param_log=True, param_shift=(0.5, 0.1), param_scale=(0.5, 0.5),
            design_scale=100.0, outcome_scale=100.0,
        )
    raise KeyError(f"no encoder preset for model '{model_id}'")


def _preset_table() -> dict[str, TrainConfig]:
    return {
        "lg_desk": TrainConfig(
            model_id="lg", objective="InfoNCE", encoder=_encoder("lg", "desk"),
            T=2, batch=256, steps=500, lr=5e-3, anneal_patience=200, preset="lg_desk",
        ),
        "locfin_desk": TrainConfig(
            model_id="locfin", objective="InfoNCE", encoder=_encoder("locfin", "desk"),
            T=4, batch=256, steps=5000, lr=1e-3, anneal_patience=2000,
            preset="locfin_desk",
        ),
        "locfin_paper": TrainConfig(
            model_id="locfin", objective="InfoNCE", encoder=_encoder("locfin", "paper"),
            T=10, batch=2048, steps=100000, lr=5e-4,
            anneal_factor=0.8, anneal_patience=2000, preset="locfin_paper",
        ),
        "pk_desk": TrainConfig(
            model_id="pk", objective="InfoNCE", encoder=_encoder("pk", "desk"),
            T=5, batch=256, steps=2000, lr=2e-3, anneal_patience=800, preset="pk_desk",
        ),
        "pk_paper": TrainConfig(
            model_id="pk", objective="InfoNCE", encoder=_encoder("pk", "paper"),
            T=5, batch=1024, steps=100000, lr=1e-4,
            anneal_factor=0.8, anneal_patience=2000, preset="pk_paper",
        ),
        "sir_desk": TrainConfig(
            model_id="sir", objective="InfoNCE", encoder=_encoder("sir", "desk"),
            T=5, batch=256, steps=2500, lr=2e-3, anneal_patience=1000,
            sir_bank_size=2000, preset="sir_desk",
        ),
        "sir_paper": TrainConfig(
            model_id="sir", objective="InfoNCE", encoder=_encoder("sir", "paper"),
            T=5, batch=512, steps=100000, lr=5e-4,
            anneal_factor=0.96, anneal_patience=1000,
            sir_bank_size=20000, preset="sir_paper",
        ),
    }


def preset_names() -> list[str]:
    return sorted(_preset_table())


def get_preset(name: str) -> TrainConfig:
    table = _preset_table()
    try:
        return table[name]
    except KeyError:
        raise KeyError(
            f"unknown preset '{name}' (known: {', '.join(sorted(table))})"
        ) from None


def load_config(source: str) -> TrainConfig:
    """A preset name, or a path to a JSON config file."""
    if source in _preset_table():
        return get_preset(source)
    if not os.path.exists(source):
        raise FileNotFoundError(
            f"'{source}' is neither a preset ({', '.join(preset_names())}) nor a config file"
        )
    with open(source) as fh:
        data = json.load(fh)
    missing = [k for k in ("model_id", "objective", "encoder", "T") if k not in data]
    if missing:
        raise KeyError(f"config file {source} is missing keys: {', '.join(missing)}")
    return TrainConfig.from_dict(data)


def save_config(path: str, config: TrainConfig) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w") as fh:
        json.dump(config.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")
    os.replace(tmp, path)
