import numpy as np

from reswcae.models import BaseOptimizerPlugin


class AdamPlugin(BaseOptimizerPlugin):
    """
    Adam with bias-corrected first and second moment estimates.

    Attributes:
        beta1 (float): Decay of the first moment.
        beta2 (float): Decay of the second moment.
        epsilon (float): Denominator floor.
        t (int): Number of steps taken.
    """

    def __init__(self, params, learning_rate, beta1=0.9, beta2=0.999, epsilon=1e-8):
        super().__init__(params, learning_rate)
        self.beta1 = beta1
        self.beta2 = beta2
        self.epsilon = epsilon
        self.t = 0
        self.m = [np.zeros_like(p.data) for p in self.params]
        self.v = [np.zeros_like(p.data) for p in self.params]

    def step(self):
        self.t += 1
        bias_correction_1 = 1 - self.beta1**self.t
        bias_correction_2 = 1 - self.beta2**self.t
        for param, m, v in zip(self.params, self.m, self.v):
            if param.grad is None:
                continue
            grad = param.grad
            m *= self.beta1
            m += (1 - self.beta1) * grad
            v *= self.beta2
            v += (1 - self.beta2) * grad * grad
            m_hat = m / bias_correction_1
            v_hat = v / bias_correction_2
            param.data -= (self.learning_rate * m_hat / (np.sqrt(v_hat) + self.epsilon)).astype(
                param.dtype
            )
