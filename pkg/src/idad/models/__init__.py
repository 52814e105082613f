"""Differentiable simulators bundled with the toolkit."""

from .base import ImplicitModel, LikelihoodUnavailable
from .linear_gaussian import LinearGaussianModel
from .location import LocationFindingModel
from .pharmacokinetic import PharmacokineticModel
from .sir import (
    PathBank,
    SDEPathGrid,
    SIRModel,
    build_path_bank,
    euler_maruyama,
    load_path_bank,
    observe_path,
    save_path_bank,
)

_REGISTRY = {
    "locfin": LocationFindingModel,
    "pk": PharmacokineticModel,
    "sir": SIRModel,
    "lg": LinearGaussianModel,
}


def model_ids() -> list[str]:
    return sorted(_REGISTRY)


def get_model(model_id: str, **kwargs) -> ImplicitModel:
    try:
        cls = _REGISTRY[model_id]
    except KeyError:
        raise KeyError(f"unknown model '{model_id}' (known: {', '.join(model_ids())})") from None
    return cls(**kwargs)


__all__ = [
    "ImplicitModel",
    "LikelihoodUnavailable",
    "LinearGaussianModel",
    "LocationFindingModel",
    "PharmacokineticModel",
    "SIRModel",
    "PathBank",
    "SDEPathGrid",
    "build_path_bank",
    "euler_maruyama",
    "load_path_bank",
    "observe_path",
    "save_path_bank",
    "get_model",
    "model_ids",
]
