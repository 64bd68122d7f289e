"""Loss mixup and learnable loss mixup for spectral denoising, at desk scale."""
from lossmix.kernels import BACKEND
from lossmix.mixing import (IdentityRho, MixingDistribution, MixingFunction, NeuralRho, PowerRho,
                            beta_inverse_cdf, phi_eval, sample_lambda)
from lossmix.trainer import TrainConfig, run_ablation, train

__version__ = "0.1.0"

__all__ = ["BACKEND", "IdentityRho", "MixingDistribution", "MixingFunction", "NeuralRho",
           "PowerRho", "TrainConfig", "beta_inverse_cdf", "phi_eval", "run_ablation",
           "sample_lambda", "train"]
