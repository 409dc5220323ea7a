from __future__ import annotations

import numpy as np


def random_psd(rng: np.random.Generator, dim: int, scale: float = 1.0) -> np.ndarray:
    a = rng.standard_normal((dim, dim))
    return a @ a.T * (scale / dim) + 1e-9 * scale * np.eye(dim)
