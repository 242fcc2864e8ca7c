"""Parameter initialisation."""

import numpy as np

from .tensor import Tensor

LEAKY_GAIN = float(np.sqrt(2.0 / (1.0 + 0.2 ** 2)))


def kaiming_uniform(shape, rng: np.random.Generator, gain: float = LEAKY_GAIN) -> Tensor:
    """Uniform fan-in init: U(-b, b) with b = gain * sqrt(3 / fan_in)."""
    fan_in = int(np.prod(shape[1:]))
    bound = gain * np.sqrt(3.0 / fan_in)
    return Tensor(rng.uniform(-bound, bound, size=shape))
