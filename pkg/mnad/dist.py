"""
MNAD - Distributions used to initialize parameters and memory items
"""
import math

import numpy as np

from .utils import LogBase

def get_dist(prefix=None, **kwargs):
    """
    Factory method to return a distribution from options

    The distribution name is taken from ``<prefix>_dist`` if given, otherwise
    ``dist``. Remaining options (e.g. ``value`` for ``Constant``) are looked up
    the same way.
    """
    def _opt(name, default):
        if prefix is not None and "%s_%s" % (prefix, name) in kwargs:
            return kwargs["%s_%s" % (prefix, name)]
        return kwargs.get(name, default)

    dist = _opt("dist", "FanInUniform")
    dist_class = globals().get(dist, None)
    if dist_class is None or not isinstance(dist_class, type) or not issubclass(dist_class, Dist):
        raise ValueError("Unrecognized distribution: %s" % dist)
    if dist_class is Constant:
        return Constant(_opt("value", 0.0))
    return dist_class()

class Dist(LogBase):
    """
    A distribution that parameter values can be drawn from
    """

    def sample(self, shape, rng):
        """
        :param shape: Shape of the array to draw
        :param rng: numpy.random.Generator
        :return: 64-bit numpy array of the requested shape
        """
        raise NotImplementedError()

class FanInUniform(Dist):
    """
    Uniform on [-1/sqrt(fan_in), 1/sqrt(fan_in)]

    The fan-in is the product of all extents except the first, i.e. input
    channels times kernel area for convolution weights stored as
    [out, in, kh, kw]. Transposed convolution weights are stored as
    [in, out, kh, kw] and are given the ``fan_in_axis`` 1.
    """

    def __init__(self, fan_in_axis=0):
        Dist.__init__(self)
        self.fan_in_axis = fan_in_axis

    def sample(self, shape, rng):
        shape = tuple(shape)
        fan_in = int(np.prod(shape)) // max(shape[self.fan_in_axis], 1) if len(shape) > 1 else shape[0]
        bound = 1.0 / math.sqrt(max(fan_in, 1))
        return rng.uniform(-bound, bound, size=shape)

    def __str__(self):
        return "Fan-in scaled uniform"

class UnitSphere(Dist):
    """
    Rows drawn uniformly on the unit sphere (normalized Gaussian vectors)
    """

    def sample(self, shape, rng):
        values = rng.standard_normal(size=shape)
        norms = np.linalg.norm(values, axis=-1, keepdims=True)
        while np.any(norms == 0):
            values = np.where(norms == 0, rng.standard_normal(size=shape), values)
            norms = np.linalg.norm(values, axis=-1, keepdims=True)
        return values / norms

    def __str__(self):
        return "Uniform on unit sphere"

class Constant(Dist):
    """
    Every value equal to a constant
    """

    def __init__(self, value=0.0):
        Dist.__init__(self)
        self.value = float(value)

    def sample(self, shape, rng):
        return np.full(shape, self.value)

    def __str__(self):
        return "Constant (%f)" % self.value
