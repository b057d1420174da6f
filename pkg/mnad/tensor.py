"""
MNAD - Dense tensors with reverse-mode differentiation

Operations are executed eagerly on numpy arrays. When any input requires a
gradient and a ``Tape`` is active, the operation is recorded on the tape so
that ``backward`` can replay it in reverse.

Image tensors use NCHW layout throughout.
"""
import collections
import threading

import numpy as np
from numpy.lib.stride_tricks import sliding_window_view

from .utils import LogBase, ShapeError, MnadError, NumericalError, get_dtype

class Tensor(object):
    """
    A dense array of real values with an optional gradient

    :attr data: numpy array of values
    :attr requires_grad: Whether gradients should be computed for this tensor
    :attr grad: numpy array of the same shape as ``data``, populated by ``backward``
    :attr name: Optional name used in diagnostics
    """

    def __init__(self, data, requires_grad=False, dtype=None, name=None):
        if dtype is None:
            if isinstance(data, np.ndarray) and np.issubdtype(data.dtype, np.floating):
                dtype = data.dtype
            else:
                dtype = get_dtype()
        self.data = np.array(data, dtype=dtype)
        self.requires_grad = bool(requires_grad)
        self.grad = None
        self.name = name

    @property
    def shape(self):
        return self.data.shape

    @property
    def ndim(self):
        return self.data.ndim

    @property
    def dtype(self):
        return self.data.dtype

    def __repr__(self):
        return "Tensor(shape=%s, dtype=%s, requires_grad=%s)" % (self.shape, self.dtype, self.requires_grad)

    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(other, self)

    def __sub__(self, other):
        return sub(self, other)

    def __rsub__(self, other):
        return sub(other, self)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(other, self)

    def __neg__(self):
        return mul(self, -1.0)

    def __matmul__(self, other):
        return matmul(self, other)

    def sum(self, axis=None, keepdims=False):
        return reduce_sum(self, axis=axis, keepdims=keepdims)

    def mean(self, axis=None, keepdims=False):
        return reduce_mean(self, axis=axis, keepdims=keepdims)

    def reshape(self, *shape):
        if len(shape) == 1 and isinstance(shape[0], (tuple, list)):
            shape = shape[0]
        return reshape(self, shape)

    def transpose(self, *axes):
        if len(axes) == 1 and isinstance(axes[0], (tuple, list)):
            axes = axes[0]
        return transpose(self, axes)

def as_tensor(value, dtype=None):
    """
    Wrap a value as a constant tensor (tensors are returned unchanged)
    """
    if isinstance(value, Tensor):
        return value
    if dtype is None and not isinstance(value, np.ndarray):
        dtype = get_dtype()
    return Tensor(value, dtype=dtype)

TapeEntry = collections.namedtuple("TapeEntry", ["kind", "inputs", "output", "ctx"])

class Tape(LogBase):
    """
    Ordered record of executed operations

    Used as a context manager: operations executed inside the ``with`` block
    on tensors requiring gradients are appended to ``entries``. A tape has a
    single owner and records only on the thread that activated it.
    """
    _local = threading.local()

    def __init__(self):
        LogBase.__init__(self)
        self.entries = []

    @classmethod
    def active(cls):
        """
        :return: The innermost active tape on this thread, or None
        """
        stack = getattr(cls._local, "stack", None)
        return stack[-1] if stack else None

    def __enter__(self):
        if not hasattr(Tape._local, "stack"):
            Tape._local.stack = []
        Tape._local.stack.append(self)
        return self

    def __exit__(self, *exc):
        Tape._local.stack.pop()
        return False

    def __len__(self):
        return len(self.entries)

    def record(self, kind, inputs, output, ctx):
        self.entries.append(TapeEntry(kind, tuple(inputs), output, ctx))

    def backward(self, seed, output=None):
        """
        Shortcut for ``backward(self, seed, output)``
        """
        backward(self, seed, output)

def backward(tape, seed, output=None):
    """
    Back-propagate a seed gradient through a tape

    Every tensor requiring gradients that is reachable from the output has
    its ``grad`` attribute replaced by the vector-Jacobian product of the
    recorded composition. Contributions from multiple consumers of the same
    tensor are summed.

    :param tape: Tape recorded during the forward pass
    :param seed: Gradient with respect to the output (Tensor or array)
    :param output: Output tensor to differentiate. Defaults to the output of
                   the last recorded operation
    """
    if tape is None or len(tape.entries) == 0:
        raise MnadError("backward called on an empty tape - run a forward pass first")
    if output is None:
        output = tape.entries[-1].output
    seed = seed.data if isinstance(seed, Tensor) else np.asarray(seed, dtype=output.dtype)
    if seed.shape != output.shape:
        raise ShapeError("backward", [seed.shape, output.shape], "seed must match output shape")

    grads = {id(output): seed.astype(output.dtype)}
    tensors = {id(output): output}
    for entry in reversed(tape.entries):
        out_grad = grads.get(id(entry.output))
        if out_grad is None:
            continue
        in_grads = OPS[entry.kind].backward(entry.ctx, out_grad)
        for tensor, grad in zip(entry.inputs, in_grads):
            if grad is None or not tensor.requires_grad:
                continue
            key = id(tensor)
            if key in grads:
                grads[key] = grads[key] + grad
            else:
                grads[key] = grad
                tensors[key] = tensor

    for key, tensor in tensors.items():
        if tensor.requires_grad:
            tensor.grad = np.asarray(grads[key], dtype=tensor.dtype).reshape(tensor.shape)

def _unbroadcast(grad, shape):
    while grad.ndim > len(shape):
        grad = grad.sum(axis=0)
    for axis, extent in enumerate(shape):
        if extent == 1 and grad.shape[axis] != 1:
            grad = grad.sum(axis=axis, keepdims=True)
    return grad

def _broadcast_check(kind, shapes):
    try:
        return np.broadcast_shapes(*shapes)
    except ValueError:
        raise ShapeError(kind, shapes, "not broadcastable")

def _axis_check(kind, shape, axis):
    if not -len(shape) <= axis < len(shape):
        raise ShapeError(kind, [shape], "axis %i out of range" % axis)
    if shape[axis] == 0:
        raise ShapeError(kind, [shape], "axis %i is empty" % axis)

def _expand_reduced(grad, shape, axis, keepdims):
    if axis is not None and not keepdims:
        grad = np.expand_dims(grad, axis)
    return np.broadcast_to(grad, shape)

class Op(object):
    """
    Base class for a differentiable operation

    Subclasses implement ``forward(arrays, **attrs) -> (output, ctx)`` and
    ``backward(ctx, grad) -> sequence of input gradients`` (None for inputs
    which are not differentiable).
    """
    n_inputs = None

    @classmethod
    def check(cls, shapes, **attrs):
        if cls.n_inputs is not None and len(shapes) != cls.n_inputs:
            raise ShapeError(cls.kind, shapes, "expected %i inputs" % cls.n_inputs)

class Add(Op):
    kind, n_inputs = "add", 2

    @classmethod
    def check(cls, shapes, **attrs):
        Op.check.__func__(cls, shapes)
        _broadcast_check(cls.kind, shapes)

    @staticmethod
    def forward(arrays):
        a, b = arrays
        return a + b, (a.shape, b.shape)

    @staticmethod
    def backward(ctx, grad):
        return _unbroadcast(grad, ctx[0]), _unbroadcast(grad, ctx[1])

class Sub(Add):
    kind = "sub"

    @staticmethod
    def forward(arrays):
        a, b = arrays
        return a - b, (a.shape, b.shape)

    @staticmethod
    def backward(ctx, grad):
        return _unbroadcast(grad, ctx[0]), -_unbroadcast(grad, ctx[1])

class Mul(Add):
    kind = "mul"

    @staticmethod
    def forward(arrays):
        a, b = arrays
        return a * b, (a, b)

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx
        return _unbroadcast(grad * b, a.shape), _unbroadcast(grad * a, b.shape)

class MatMul(Op):
    """
    Batched matrix product over the last two axes, leading axes broadcast
    """
    kind, n_inputs = "matmul", 2

    @classmethod
    def check(cls, shapes, **attrs):
        Op.check.__func__(cls, shapes)
        a, b = shapes
        if len(a) < 2 or len(b) < 2 or a[-1] != b[-2]:
            raise ShapeError(cls.kind, shapes, "inner dimensions do not match")
        _broadcast_check(cls.kind, [a[:-2], b[:-2]])

    @staticmethod
    def forward(arrays):
        a, b = arrays
        return np.matmul(a, b), (a, b)

    @staticmethod
    def backward(ctx, grad):
        a, b = ctx
        grad_a = np.matmul(grad, np.swapaxes(b, -1, -2))
        grad_b = np.matmul(np.swapaxes(a, -1, -2), grad)
        return _unbroadcast(grad_a, a.shape), _unbroadcast(grad_b, b.shape)

def _pad2d(x, padding):
    if padding == 0:
        return x
    return np.pad(x, ((0, 0), (0, 0), (padding, padding), (padding, padding)))

class Conv2d(Op):
    """
    2D cross-correlation. Inputs: x [N, Ci, H, W], weights [Co, Ci, kh, kw], optional bias [Co]
    """
    kind = "conv2d"

    @classmethod
    def check(cls, shapes, stride=1, padding=0):
        if len(shapes) not in (2, 3):
            raise ShapeError(cls.kind, shapes, "expected input, weights and optional bias")
        x, w = shapes[:2]
        if len(x) != 4 or len(w) != 4 or x[1] != w[1]:
            raise ShapeError(cls.kind, shapes, "channel mismatch or rank is not 4")
        if len(shapes) == 3 and tuple(shapes[2]) != (w[0],):
            raise ShapeError(cls.kind, shapes, "bias must have one value per output channel")
        if stride < 1 or padding < 0:
            raise ShapeError(cls.kind, shapes, "stride %i padding %i" % (stride, padding))
        if x[2] + 2*padding < w[2] or x[3] + 2*padding < w[3]:
            raise ShapeError(cls.kind, shapes, "kernel larger than padded input")

    @staticmethod
    def forward(arrays, stride=1, padding=0):
        x, w = arrays[:2]
        kh, kw = w.shape[2:]
        cols = sliding_window_view(_pad2d(x, padding), (kh, kw), axis=(2, 3))[:, :, ::stride, ::stride]
        out = np.tensordot(cols, w, axes=([1, 4, 5], [1, 2, 3])).transpose(0, 3, 1, 2)
        if len(arrays) == 3:
            out = out + arrays[2][None, :, None, None]
        return np.ascontiguousarray(out), (x.shape, w, cols, stride, padding, len(arrays) == 3)

    @staticmethod
    def backward(ctx, grad):
        x_shape, w, cols, stride, padding, has_bias = ctx
        kh, kw = w.shape[2:]
        out_h, out_w = grad.shape[2:]
        grad_w = np.tensordot(grad, cols, axes=([0, 2, 3], [0, 2, 3]))
        grad_cols = np.tensordot(grad, w, axes=([1], [0]))
        n, c, h, wd = x_shape
        grad_xp = np.zeros((n, c, h + 2*padding, wd + 2*padding), dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                grad_xp[:, :, i:i + stride*(out_h-1) + 1:stride, j:j + stride*(out_w-1) + 1:stride] += \
                    grad_cols[:, :, :, :, i, j].transpose(0, 3, 1, 2)
        grad_x = grad_xp[:, :, padding:padding + h, padding:padding + wd]
        ret = [grad_x, grad_w]
        if has_bias:
            ret.append(grad.sum(axis=(0, 2, 3)))
        return ret

class TransposedConv2d(Op):
    """
    2D transposed convolution. Inputs: x [N, Ci, H, W], weights [Ci, Co, kh, kw], optional bias [Co]

    Output extent is ``(H - 1) * stride - 2 * padding + kh``.
    """
    kind = "transposed_conv2d"

    @classmethod
    def check(cls, shapes, stride=1, padding=0):
        if len(shapes) not in (2, 3):
            raise ShapeError(cls.kind, shapes, "expected input, weights and optional bias")
        x, w = shapes[:2]
        if len(x) != 4 or len(w) != 4 or x[1] != w[0]:
            raise ShapeError(cls.kind, shapes, "channel mismatch or rank is not 4")
        if len(shapes) == 3 and tuple(shapes[2]) != (w[1],):
            raise ShapeError(cls.kind, shapes, "bias must have one value per output channel")
        if stride < 1 or padding < 0:
            raise ShapeError(cls.kind, shapes, "stride %i padding %i" % (stride, padding))
        if (x[2] - 1) * stride - 2*padding + w[2] < 1 or (x[3] - 1) * stride - 2*padding + w[3] < 1:
            raise ShapeError(cls.kind, shapes, "output would be empty")

    @staticmethod
    def forward(arrays, stride=1, padding=0):
        x, w = arrays[:2]
        n, _, h, wd = x.shape
        kh, kw = w.shape[2:]
        full_h, full_w = (h - 1)*stride + kh, (wd - 1)*stride + kw
        full = np.zeros((n, w.shape[1], full_h, full_w), dtype=np.result_type(x, w))
        for i in range(kh):
            for j in range(kw):
                full[:, :, i:i + stride*(h-1) + 1:stride, j:j + stride*(wd-1) + 1:stride] += \
                    np.tensordot(x, w[:, :, i, j], axes=([1], [0])).transpose(0, 3, 1, 2)
        out = full[:, :, padding:full_h - padding, padding:full_w - padding]
        if len(arrays) == 3:
            out = out + arrays[2][None, :, None, None]
        return np.ascontiguousarray(out), (x, w, stride, padding, len(arrays) == 3)

    @staticmethod
    def backward(ctx, grad):
        x, w, stride, padding, has_bias = ctx
        h, wd = x.shape[2:]
        kh, kw = w.shape[2:]
        grad_full = _pad2d(grad, padding)
        grad_x = np.zeros(x.shape, dtype=grad.dtype)
        grad_w = np.zeros(w.shape, dtype=grad.dtype)
        for i in range(kh):
            for j in range(kw):
                window = grad_full[:, :, i:i + stride*(h-1) + 1:stride, j:j + stride*(wd-1) + 1:stride]
                grad_x += np.tensordot(window, w[:, :, i, j], axes=([1], [1])).transpose(0, 3, 1, 2)
                grad_w[:, :, i, j] = np.tensordot(x, window, axes=([0, 2, 3], [0, 2, 3]))
        ret = [grad_x, grad_w]
        if has_bias:
            ret.append(grad.sum(axis=(0, 2, 3)))
        return ret

class Relu(Op):
    kind, n_inputs = "relu", 1

    @staticmethod
    def forward(arrays):
        out = np.maximum(arrays[0], 0)
        return out, out

    @staticmethod
    def backward(ctx, grad):
        # Subgradient at exactly zero is 0
        return (grad * (ctx > 0),)

class Tanh(Op):
    kind, n_inputs = "tanh", 1

    @staticmethod
    def forward(arrays):
        out = np.tanh(arrays[0])
        return out, out

    @staticmethod
    def backward(ctx, grad):
        return (grad * (1 - ctx**2),)

class BatchNorm2d(Op):
    """
    Batch normalization over the channel axis of NCHW input

    Inputs: x, gamma [C], beta [C]. In training mode the batch statistics
    are used and the running statistics (``running_mean``, ``running_var``
    tensors passed as attributes) are replaced by their exponential moving
    average. In evaluation mode the running statistics are used.
    """
    kind, n_inputs = "batchnorm2d", 3

    @classmethod
    def check(cls, shapes, running_mean=None, running_var=None, **attrs):
        Op.check.__func__(cls, shapes)
        x, gamma, beta = shapes
        if len(x) != 4 or tuple(gamma) != (x[1],) or tuple(beta) != (x[1],):
            raise ShapeError(cls.kind, shapes, "expected NCHW input and per-channel affine parameters")
        if running_mean is None or running_var is None:
            raise ShapeError(cls.kind, shapes, "running statistics are required")
        if running_mean.shape != (x[1],) or running_var.shape != (x[1],):
            raise ShapeError(cls.kind, shapes + [running_mean.shape, running_var.shape], "running statistics shape")

    @staticmethod
    def forward(arrays, running_mean=None, running_var=None, training=False, momentum=0.1, eps=1e-5):
        x, gamma, beta = arrays
        if training:
            count = x.shape[0] * x.shape[2] * x.shape[3]
            mean = x.mean(axis=(0, 2, 3))
            var = x.var(axis=(0, 2, 3))
            unbiased = var * count / max(count - 1, 1)
            running_mean.data = ((1 - momentum) * running_mean.data + momentum * mean).astype(running_mean.dtype)
            running_var.data = ((1 - momentum) * running_var.data + momentum * unbiased).astype(running_var.dtype)
        else:
            mean, var = running_mean.data, running_var.data
        inv_std = 1.0 / np.sqrt(var + eps)
        xhat = (x - mean[None, :, None, None]) * inv_std[None, :, None, None]
        out = gamma[None, :, None, None] * xhat + beta[None, :, None, None]
        return out.astype(x.dtype), (xhat, gamma, inv_std, training)

    @staticmethod
    def backward(ctx, grad):
        xhat, gamma, inv_std, training = ctx
        grad_gamma = (grad * xhat).sum(axis=(0, 2, 3))
        grad_beta = grad.sum(axis=(0, 2, 3))
        scale = (gamma * inv_std)[None, :, None, None]
        if training:
            count = grad.shape[0] * grad.shape[2] * grad.shape[3]
            grad_x = scale / count * (count * grad - grad_beta[None, :, None, None]
                                      - xhat * grad_gamma[None, :, None, None])
        else:
            grad_x = grad * scale
        return grad_x, grad_gamma, grad_beta

class SoftmaxAxis(Op):
    kind, n_inputs = "softmax_axis", 1

    @classmethod
    def check(cls, shapes, axis=-1):
        Op.check.__func__(cls, shapes)
        _axis_check(cls.kind, shapes[0], axis)

    @staticmethod
    def forward(arrays, axis=-1):
        x = arrays[0]
        ex = np.exp(x - x.max(axis=axis, keepdims=True))
        out = ex / ex.sum(axis=axis, keepdims=True)
        return out, (out, axis)

    @staticmethod
    def backward(ctx, grad):
        out, axis = ctx
        return (out * (grad - (grad * out).sum(axis=axis, keepdims=True)),)

class L2NormalizeAxis(Op):
    """
    Scale vectors along an axis to unit L2 norm. Zero vectors map to zero
    with zero gradient.
    """
    kind, n_inputs = "l2_normalize_axis", 1

    @classmethod
    def check(cls, shapes, axis=-1):
        Op.check.__func__(cls, shapes)
        _axis_check(cls.kind, shapes[0], axis)

    @staticmethod
    def forward(arrays, axis=-1):
        x = arrays[0]
        norm = np.sqrt((x * x).sum(axis=axis, keepdims=True))
        nonzero = norm > 0
        safe = np.where(nonzero, norm, 1)
        out = np.where(nonzero, x / safe, 0)
        return out, (out, safe, nonzero, axis)

    @staticmethod
    def backward(ctx, grad):
        out, safe, nonzero, axis = ctx
        grad_x = (grad - out * (grad * out).sum(axis=axis, keepdims=True)) / safe
        return (np.where(nonzero, grad_x, 0),)

class NormAxis(Op):
    """
    L2 norm along an axis (reduced). Gradient at a zero vector is zero.
    """
    kind, n_inputs = "norm_axis", 1

    @classmethod
    def check(cls, shapes, axis=-1):
        Op.check.__func__(cls, shapes)
        _axis_check(cls.kind, shapes[0], axis)

    @staticmethod
    def forward(arrays, axis=-1):
        x = arrays[0]
        norm = np.sqrt((x * x).sum(axis=axis))
        return norm, (x, norm, axis)

    @staticmethod
    def backward(ctx, grad):
        x, norm, axis = ctx
        norm = np.expand_dims(norm, axis)
        grad = np.expand_dims(grad, axis)
        safe = np.where(norm > 0, norm, 1)
        return (np.where(norm > 0, grad * x / safe, 0),)

class ConcatAxis(Op):
    kind = "concat_axis"

    @classmethod
    def check(cls, shapes, axis=1):
        if len(shapes) < 1:
            raise ShapeError(cls.kind, shapes, "nothing to concatenate")
        ref = shapes[0]
        if not -len(ref) <= axis < len(ref):
            raise ShapeError(cls.kind, shapes, "axis %i out of range" % axis)
        for shape in shapes[1:]:
            if len(shape) != len(ref):
                raise ShapeError(cls.kind, shapes, "rank mismatch")
            for dim in range(len(ref)):
                if dim != axis % len(ref) and shape[dim] != ref[dim]:
                    raise ShapeError(cls.kind, shapes, "extents differ off axis %i" % axis)

    @staticmethod
    def forward(arrays, axis=1):
        sizes = [a.shape[axis] for a in arrays]
        return np.concatenate(arrays, axis=axis), (sizes, axis)

    @staticmethod
    def backward(ctx, grad):
        sizes, axis = ctx
        return np.split(grad, np.cumsum(sizes)[:-1], axis=axis)

class Slice(Op):
    """
    Basic (non-fancy) indexing with a tuple of slices / integers
    """
    kind, n_inputs = "slice", 1

    @staticmethod
    def forward(arrays, index=()):
        x = arrays[0]
        return x[index].copy(), (x.shape, x.dtype, index)

    @staticmethod
    def backward(ctx, grad):
        shape, dtype, index = ctx
        grad_x = np.zeros(shape, dtype=grad.dtype)
        grad_x[index] = grad
        return (grad_x,)

class Take(Op):
    """
    Gather rows along axis 0 with an integer index array
    """
    kind, n_inputs = "take", 1

    @classmethod
    def check(cls, shapes, indices=None):
        Op.check.__func__(cls, shapes)
        indices = np.asarray(indices)
        if len(shapes[0]) < 1 or (indices.size and (indices.min() < 0 or indices.max() >= shapes[0][0])):
            raise ShapeError(cls.kind, [shapes[0], indices.shape], "index out of range")

    @staticmethod
    def forward(arrays, indices=None):
        x = arrays[0]
        indices = np.asarray(indices, dtype=np.int64)
        return np.take(x, indices, axis=0), (x.shape, indices)

    @staticmethod
    def backward(ctx, grad):
        shape, indices = ctx
        grad_x = np.zeros(shape, dtype=grad.dtype)
        np.add.at(grad_x, indices, grad)
        return (grad_x,)

class Reshape(Op):
    kind, n_inputs = "reshape", 1

    @classmethod
    def check(cls, shapes, shape=()):
        Op.check.__func__(cls, shapes)
        try:
            np.empty(shapes[0], dtype=np.int8).reshape(shape)
        except ValueError:
            raise ShapeError(cls.kind, [shapes[0], tuple(shape)], "size mismatch")

    @staticmethod
    def forward(arrays, shape=()):
        x = arrays[0]
        return x.reshape(shape), x.shape

    @staticmethod
    def backward(ctx, grad):
        return (grad.reshape(ctx),)

class Transpose(Op):
    kind, n_inputs = "transpose", 1

    @staticmethod
    def forward(arrays, axes=None):
        return np.ascontiguousarray(np.transpose(arrays[0], axes)), axes

    @staticmethod
    def backward(ctx, grad):
        if ctx is None:
            return (np.transpose(grad),)
        return (np.transpose(grad, np.argsort(ctx)),)

class Sum(Op):
    kind, n_inputs = "sum", 1

    @staticmethod
    def forward(arrays, axis=None, keepdims=False):
        x = arrays[0]
        return np.asarray(x.sum(axis=axis, keepdims=keepdims)), (x.shape, axis, keepdims)

    @staticmethod
    def backward(ctx, grad):
        shape, axis, keepdims = ctx
        return (_expand_reduced(grad, shape, axis, keepdims).copy(),)

class Mean(Op):
    kind, n_inputs = "mean", 1

    @staticmethod
    def forward(arrays, axis=None, keepdims=False):
        x = arrays[0]
        out = np.asarray(x.mean(axis=axis, keepdims=keepdims))
        return out, (x.shape, axis, keepdims, x.size // max(out.size, 1))

    @staticmethod
    def backward(ctx, grad):
        shape, axis, keepdims, count = ctx
        return (_expand_reduced(grad, shape, axis, keepdims) / count,)

class SqL2Distance(Op):
    """
    Squared Euclidean distance along an axis (reduced), inputs broadcast
    """
    kind, n_inputs = "sq_l2_distance", 2

    @classmethod
    def check(cls, shapes, axis=-1):
        Op.check.__func__(cls, shapes)
        shape = _broadcast_check(cls.kind, shapes)
        _axis_check(cls.kind, shape, axis)

    @staticmethod
    def forward(arrays, axis=-1):
        a, b = arrays
        diff = a - b
        return (diff * diff).sum(axis=axis), (diff, a.shape, b.shape, axis)

    @staticmethod
    def backward(ctx, grad):
        diff, a_shape, b_shape, axis = ctx
        grad_diff = 2 * diff * np.expand_dims(grad, axis)
        return _unbroadcast(grad_diff, a_shape), -_unbroadcast(grad_diff, b_shape)

OPS = {
    op.kind : op for op in [
        Add, Sub, Mul, MatMul, Conv2d, TransposedConv2d, Relu, Tanh, BatchNorm2d,
        SoftmaxAxis, L2NormalizeAxis, NormAxis, ConcatAxis, Slice, Take, Reshape,
        Transpose, Sum, Mean, SqL2Distance,
    ]
}

def get_op(kind):
    """
    :return: Operation class for a kind name
    :raise: ValueError if no such operation exists
    """
    op = OPS.get(kind, None)
    if op is None:
        raise ValueError("No such operation: %s" % kind)
    return op

def forward_op(kind, inputs, attrs=None):
    """
    Execute an operation

    :param kind: Operation name, see ``OPS``
    :param inputs: Sequence of tensors (or array-likes, treated as constants)
    :param attrs: Dictionary of operation attributes, e.g. stride/padding
    :return: Output tensor. The operation is recorded on the active tape if any
             input requires gradients
    """
    op = get_op(kind)
    attrs = attrs or {}
    inputs = [as_tensor(t) for t in inputs]
    op.check([t.shape for t in inputs], **attrs)
    out, ctx = op.forward([t.data for t in inputs], **attrs)
    requires_grad = any(t.requires_grad for t in inputs)
    result = Tensor(out, requires_grad=requires_grad, dtype=np.asarray(out).dtype)
    tape = Tape.active()
    if requires_grad and tape is not None:
        tape.record(kind, inputs, result, ctx)
    return result

def add(a, b):
    return forward_op("add", [a, b])

def sub(a, b):
    return forward_op("sub", [a, b])

def mul(a, b):
    return forward_op("mul", [a, b])

def matmul(a, b):
    return forward_op("matmul", [a, b])

def conv2d(x, weights, bias=None, stride=1, padding=0):
    inputs = [x, weights] if bias is None else [x, weights, bias]
    return forward_op("conv2d", inputs, dict(stride=stride, padding=padding))

def transposed_conv2d(x, weights, bias=None, stride=1, padding=0):
    inputs = [x, weights] if bias is None else [x, weights, bias]
    return forward_op("transposed_conv2d", inputs, dict(stride=stride, padding=padding))

def relu(x):
    return forward_op("relu", [x])

def tanh(x):
    return forward_op("tanh", [x])

def batchnorm2d(x, gamma, beta, running_mean, running_var, training=False, momentum=0.1, eps=1e-5):
    return forward_op("batchnorm2d", [x, gamma, beta],
                      dict(running_mean=running_mean, running_var=running_var,
                           training=training, momentum=momentum, eps=eps))

def softmax(x, axis=-1):
    return forward_op("softmax_axis", [x], dict(axis=axis))

def l2_normalize(x, axis=-1):
    return forward_op("l2_normalize_axis", [x], dict(axis=axis))

def norm(x, axis=-1):
    return forward_op("norm_axis", [x], dict(axis=axis))

def concat(tensors, axis=1):
    return forward_op("concat_axis", list(tensors), dict(axis=axis))

def slice_(x, index):
    return forward_op("slice", [x], dict(index=index))

def take(x, indices):
    return forward_op("take", [x], dict(indices=indices))

def reshape(x, shape):
    return forward_op("reshape", [x], dict(shape=tuple(shape)))

def transpose(x, axes=None):
    return forward_op("transpose", [x], dict(axes=None if axes is None else tuple(axes)))

def reduce_sum(x, axis=None, keepdims=False):
    return forward_op("sum", [x], dict(axis=axis, keepdims=keepdims))

def reduce_mean(x, axis=None, keepdims=False):
    return forward_op("mean", [x], dict(axis=axis, keepdims=keepdims))

def sq_l2_distance(a, b, axis=-1):
    return forward_op("sq_l2_distance", [a, b], dict(axis=axis))

def finite_diff_check(scalar_fn, point, eps=1e-6):
    """
    Compare analytic gradients against central differences

    The point tensor is perturbed in place one coordinate at a time and
    restored afterwards, so ``scalar_fn`` may either use its argument or
    close over a model that holds ``point`` as one of its parameters.

    :param scalar_fn: Callable taking ``point`` and returning a single-element tensor
    :param point: 64-bit tensor at which to evaluate gradients
    :param eps: Central difference step
    :return: max over coordinates of |analytic - numeric| / max(1, |analytic|)
    """
    if point.dtype != np.float64:
        raise ValueError("Gradient checks must run in 64-bit precision (got %s)" % point.dtype)
    if eps <= 0:
        raise ValueError("Finite difference step must be positive: %g" % eps)

    def _evaluate():
        value = np.asarray(scalar_fn(point).data, dtype=np.float64)
        if value.size != 1:
            raise ShapeError("finite_diff_check", [value.shape], "function must return a single value")
        if not np.all(np.isfinite(value)):
            raise NumericalError("Non-finite function value during gradient check")
        return float(value.reshape(()))

    was_required, point.requires_grad = point.requires_grad, True
    try:
        point.grad = None
        with Tape() as tape:
            out = scalar_fn(point)
        if not np.all(np.isfinite(out.data)):
            raise NumericalError("Non-finite function value during gradient check")
        if len(tape) > 0:
            backward(tape, np.ones_like(out.data), output=out)
        analytic = point.grad if point.grad is not None else np.zeros_like(point.data)
        if not np.all(np.isfinite(analytic)):
            raise NumericalError("Non-finite analytic gradient during gradient check")

        max_err = 0.0
        for idx in np.ndindex(*point.shape):
            orig = point.data[idx]
            point.data[idx] = orig + eps
            f_plus = _evaluate()
            point.data[idx] = orig - eps
            f_minus = _evaluate()
            point.data[idx] = orig
            numeric = (f_plus - f_minus) / (2 * eps)
            err = abs(analytic[idx] - numeric) / max(1.0, abs(analytic[idx]))
            max_err = max(max_err, err)
        return max_err
    finally:
        point.requires_grad = was_required
