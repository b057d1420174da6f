"""
MNAD - Adam optimizer and cosine annealing learning rate schedule
"""
import math

import numpy as np

from .utils import LogBase, NumericalError, ShapeError

class OptimizerState(object):
    """
    Adam state

    :attr m: Mapping from parameter name to first moment array
    :attr v: Mapping from parameter name to second moment array
    :attr step: Number of steps taken so far
    """

    def __init__(self, beta1=0.9, beta2=0.999, eps=1e-8, lr=1e-3):
        self.beta1 = beta1
        self.beta2 = beta2
        self.eps = eps
        self.lr = lr
        self.step = 0
        self.m = {}
        self.v = {}

    def moments(self, name, like):
        """
        Get the moment arrays for a parameter, creating zeroed arrays on first use
        """
        if name not in self.m:
            self.m[name] = np.zeros_like(like)
            self.v[name] = np.zeros_like(like)
        if self.m[name].shape != like.shape:
            raise ShapeError("adam_step", [self.m[name].shape, like.shape], "moment shape for %s" % name)
        return self.m[name], self.v[name]

def adam_step(params, grads, state, lr):
    """
    Apply one bias-corrected Adam update

    :param params: Mapping from parameter name to Tensor. Tensor data is replaced
    :param grads: Mapping from parameter name to gradient array
    :param state: ``OptimizerState``, advanced by one step
    :param lr: Learning rate for this step
    """
    if lr < 0:
        raise ValueError("Learning rate must not be negative: %g" % lr)
    for name, grad in grads.items():
        if not np.all(np.isfinite(grad)):
            raise NumericalError("Non-finite gradient for parameter %s" % name)
        if grad.shape != params[name].shape:
            raise ShapeError("adam_step", [params[name].shape, grad.shape], "gradient shape for %s" % name)

    state.step += 1
    state.lr = lr
    bias1 = 1 - state.beta1 ** state.step
    bias2 = 1 - state.beta2 ** state.step
    for name in sorted(grads):
        param, grad = params[name], grads[name]
        m, v = state.moments(name, param.data)
        m = state.beta1 * m + (1 - state.beta1) * grad
        v = state.beta2 * v + (1 - state.beta2) * grad * grad
        state.m[name], state.v[name] = m.astype(param.dtype), v.astype(param.dtype)
        update = lr * (m / bias1) / (np.sqrt(v / bias2) + state.eps)
        param.data = (param.data - update).astype(param.dtype)

def cosine_lr(step, total_steps, lr0):
    """
    Cosine annealing from ``lr0`` at step 0 down to zero at ``total_steps``
    """
    if total_steps <= 0:
        raise ValueError("Total number of steps must be positive: %i" % total_steps)
    if not 0 <= step <= total_steps:
        raise ValueError("Step %i outside schedule of %i steps" % (step, total_steps))
    if lr0 <= 0:
        raise ValueError("Initial learning rate must be positive: %g" % lr0)
    return max(0.0, 0.5 * lr0 * (1 + math.cos(math.pi * step / total_steps)))

class AdamOptimizer(LogBase):
    """
    Adam over a named set of trainable tensors with a cosine annealed learning rate

    :attr params: Mapping from name to trainable Tensor
    :attr state: ``OptimizerState``
    """

    def __init__(self, params, lr=1e-3, total_steps=1, beta1=0.9, beta2=0.999, eps=1e-8):
        LogBase.__init__(self)
        self.params = dict(params)
        self.lr0 = lr
        self.total_steps = total_steps
        self.state = OptimizerState(beta1=beta1, beta2=beta2, eps=eps, lr=lr)

    def current_lr(self):
        """
        :return: Learning rate that the next step will use
        """
        return cosine_lr(min(self.state.step, self.total_steps), self.total_steps, self.lr0)

    def zero_grad(self):
        for param in self.params.values():
            param.grad = None

    def step(self):
        """
        Take a step using the ``grad`` of each parameter (missing gradients count as zero)

        :return: The learning rate used
        """
        lr = self.current_lr()
        grads = {}
        for name, param in self.params.items():
            grads[name] = param.grad if param.grad is not None else np.zeros_like(param.data)
        adam_step(self.params, grads, self.state, lr)
        return lr
