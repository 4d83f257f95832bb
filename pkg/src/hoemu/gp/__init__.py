"""Gaussian-process regression: kernels, exact, local and low-rank models."""

from .exact import ExactGP, gp_fit, gp_predict
from .kernels import ARD_SE, MATERN32, KernelSpec, is_psd, kernel_eval
from .local import LocalGP, LocalGPConfig, local_gp_predict
from .lowrank import LowRankBasis, LowRankConfig, LowRankGP, lowrank_fit, lowrank_predict

__all__ = [
    "ARD_SE",
    "MATERN32",
    "ExactGP",
    "KernelSpec",
    "LocalGP",
    "LocalGPConfig",
    "LowRankBasis",
    "LowRankConfig",
    "LowRankGP",
    "gp_fit",
    "gp_predict",
    "is_psd",
    "kernel_eval",
    "local_gp_predict",
    "lowrank_fit",
    "lowrank_predict",
]
