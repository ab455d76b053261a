"""Input validation for sequence batches."""
import numpy as np
from sklearn.utils.validation import check_array

from .exceptions import DimensionError


def check_sequences(X, channels=None, length=None) -> np.ndarray:
    """Return ``X`` as a finite float64 array of shape ``(B, N, C)``."""
    X = check_array(X, allow_nd=True, dtype=np.float64, ensure_all_finite=True, ensure_2d=False)
    if X.ndim != 3:
        raise DimensionError(f"expected sequences of shape (n_samples, n_steps, n_channels), got {X.shape}")
    if X.shape[1] < 1:
        raise DimensionError("sequences need at least one timestep")
    if channels is not None and X.shape[2] != channels:
        raise DimensionError(f"expected {channels} channels, got {X.shape[2]}")
    if length is not None and X.shape[1] != length:
        raise DimensionError(f"expected {length} timesteps, got {X.shape[1]}")
    return X
