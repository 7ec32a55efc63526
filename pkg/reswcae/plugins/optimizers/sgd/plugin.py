from reswcae.models import BaseOptimizerPlugin


class SGDPlugin(BaseOptimizerPlugin):
    """Plain stochastic gradient descent."""

    def step(self):
        for param in self.params:
            if param.grad is not None:
                param.data -= (self.learning_rate * param.grad).astype(param.dtype)
