from dataclasses import dataclass

import numpy as np


@dataclass(frozen=True)
class SamplePair:
    """One (noisy, clean) training example as log-power spectrograms."""

    noisy: np.ndarray  # (frames, bins)
    clean: np.ndarray  # (frames, bins)
    snr_db: float = float("nan")
    noise_kind: str = ""
    seed: int = -1


@dataclass(frozen=True)
class VirtualSample:
    noisy: np.ndarray
    clean_j: np.ndarray
    clean_k: np.ndarray
    lam: float


def stack(pairs):
    """(batch, frames, bins) arrays of noisy inputs and clean targets."""
    return (np.stack([p.noisy for p in pairs]), np.stack([p.clean for p in pairs]))
