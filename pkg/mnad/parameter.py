"""
MNAD - Model parameters

A parameter is a named tensor in the model. Trainable parameters (weights,
biases, batchnorm scale/shift) are updated by the optimizer; buffers
(batchnorm running statistics) are updated by the forward pass only.
"""
from .utils import LogBase, get_dtype
from .tensor import Tensor
from . import dist

def get_parameter(name, shape, rng, **kwargs):
    """
    Factory method to create an instance of a parameter

    Keyword arguments:
         - ``init`` Name of the initialization distribution. Other keyword arguments beginning with ``init``
                    are passed to the ``dist.get_dist`` factory function to construct it.
         - ``fan_in_axis`` Axis holding the output features for fan-in scaled initialization
         - ``trainable`` If False the parameter is a buffer, not updated by the optimizer
         - ``desc`` Text description
    """
    init = dist.get_dist(prefix="init", dist=kwargs.get("init", "FanInUniform"), **kwargs)
    if isinstance(init, dist.FanInUniform):
        init.fan_in_axis = kwargs.get("fan_in_axis", 0)
    values = init.sample(shape, rng)
    return Parameter(name, values, desc=kwargs.get("desc", "No description given"),
                     trainable=kwargs.get("trainable", True))

class Parameter(LogBase):
    """
    A named model parameter

    :attr name: Stable name used as the key in checkpoints
    :attr tensor: Tensor holding the values
    :attr trainable: Whether the optimizer updates this parameter
    """

    def __init__(self, name, values, **kwargs):
        """
        Constructor

        :param name: Parameter name
        :param values: Initial values

        Keyword arguments (optional):
         - ``desc`` Text description
         - ``trainable`` False for buffers such as batchnorm running statistics
        """
        LogBase.__init__(self)
        self.name = name
        self.desc = kwargs.get("desc", "No description given")
        self.trainable = kwargs.get("trainable", True)
        self.tensor = Tensor(values, requires_grad=self.trainable, dtype=get_dtype(), name=name)

    @property
    def shape(self):
        return self.tensor.shape

    def __str__(self):
        return "Parameter: %s %s (%s)" % (self.name, list(self.shape), self.desc)
