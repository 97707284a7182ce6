from dataclasses import dataclass, field
from typing import Dict

import numpy as np

from ..errors import ShapeMismatch


@dataclass
class Adam:
    """Adam with bias correction; updates parameter arrays in place.

    Moments are keyed by parameter name so that several tensors can be
    stepped together or one at a time with identical results.
    """

    lr: float = 0.001
    beta1: float = 0.9
    beta2: float = 0.999
    epsilon: float = 1e-7
    step_count: int = 0
    first_moment: Dict[str, np.ndarray] = field(default_factory=dict)
    second_moment: Dict[str, np.ndarray] = field(default_factory=dict)

    def step(self, params: Dict[str, np.ndarray], grads: Dict[str, np.ndarray]) -> None:
        self.step_count += 1
        t = self.step_count
        c1 = 1.0 - self.beta1 ** t
        c2 = 1.0 - self.beta2 ** t
        for name, theta in params.items():
            g = grads[name]
            if g.shape != theta.shape:
                raise ShapeMismatch(f"{name}: grad {g.shape} vs param {theta.shape}")
            m = self.first_moment.get(name)
            if m is None:
                m = self.first_moment[name] = np.zeros_like(theta)
                self.second_moment[name] = np.zeros_like(theta)
            v = self.second_moment[name]
            m *= self.beta1
            m += (1.0 - self.beta1) * g
            v *= self.beta2
            v += (1.0 - self.beta2) * g * g
            theta -= self.lr * (m / c1) / (np.sqrt(v / c2) + self.epsilon)
