# The numerical core of the event classifier, written with numpy alone: forward and backward passes for each layer,
# the cross-entropy loss, the Adam optimizer, the step learning-rate schedule, and the EventCNN model that strings
# them together (two conv blocks, adaptive average pooling, a fully connected head).
#
# Arrays are batch x channel x time. conv1dForward() and batchnormForward() return (output, cache) and their
# backward functions take that cache; the stateless layers' backward functions take the forward input instead.

import logging

import numpy as np

import pyautolabel
from pyautolabel import (
    NUM_CLASSES,
    CHECKPOINT_VERSION,
    ShapeException,
    NonFiniteException,
    DatasetException,
    FormatException,
    _checkFinite,
)

log = logging.getLogger(__name__)

RELU_BN = "relu_bn"  # conv -> ReLU -> BatchNorm
BN_RELU = "bn_relu"  # conv -> BatchNorm -> ReLU
LAYER_ORDERS = (RELU_BN, BN_RELU)


def _check3d(x, name="x"):
    if x.ndim != 3:
        raise ShapeException("%s must be batch x channel x time, not shape %s" % (name, x.shape))


@_checkFinite
def conv1dForward(x, weight, bias, padding=1):
    """
    Returns ``(out, cache)`` for a stride-1 cross-correlation of ``x`` (batch x inChannels x time) with ``weight``
    (outChannels x inChannels x kernel), zero-padded by ``padding`` samples on each side.
    """
    _check3d(x)
    if weight.ndim != 3 or x.shape[1] != weight.shape[1]:
        raise ShapeException("conv1d: input has %d channels but weight has shape %s" % (x.shape[1], weight.shape))
    batch, inChannels, length = x.shape
    outChannels, _, kernel = weight.shape
    xp = np.pad(x, ((0, 0), (0, 0), (padding, padding)))
    outLength = length + 2 * padding - kernel + 1
    if outLength < 1:
        raise ShapeException("conv1d: input of length %d is too short for kernel %d" % (length, kernel))
    # im2col: one row per (batch, output step), one column per (input channel, kernel tap).
    cols = np.lib.stride_tricks.sliding_window_view(xp, kernel, axis=2)
    cols = cols.transpose(0, 2, 1, 3).reshape(batch * outLength, inChannels * kernel)
    out = cols @ weight.reshape(outChannels, -1).T + bias
    out = out.reshape(batch, outLength, outChannels).transpose(0, 2, 1)
    return np.ascontiguousarray(out), (cols, x.shape, weight, padding)


def conv1dBackward(gradOut, cache):
    """Returns ``(gradX, gradWeight, gradBias)`` for ``conv1dForward()``."""
    cols, xShape, weight, padding = cache
    batch, inChannels, length = xShape
    outChannels, _, kernel = weight.shape
    outLength = gradOut.shape[2]
    g = gradOut.transpose(0, 2, 1).reshape(batch * outLength, outChannels)
    gradWeight = (g.T @ cols).reshape(weight.shape)
    gradBias = gradOut.sum(axis=(0, 2))
    dcols = (g @ weight.reshape(outChannels, -1)).reshape(batch, outLength, inChannels, kernel)
    gradXp = np.zeros((batch, inChannels, length + 2 * padding), dtype=gradOut.dtype)
    for k in range(kernel):
        gradXp[:, :, k:k + outLength] += dcols[:, :, :, k].transpose(0, 2, 1)
    return gradXp[:, :, padding:padding + length], gradWeight, gradBias


@_checkFinite
def batchnormForward(x, gamma, beta, runningMean, runningVar, training=True, momentum=0.1, eps=1e-5):
    """
    Returns ``(out, cache)`` for batch normalization over the batch and time axes of each channel.

    In training mode the batch statistics are used, and ``runningMean`` / ``runningVar`` are updated in place with
    ``momentum`` (the running variance uses the unbiased estimate). In eval mode the running statistics are used.

    Raises:
      ShapeException: If a channel has fewer than 2 values in training mode.
    """
    _check3d(x)
    if gamma.shape != (x.shape[1],):
        raise ShapeException("batchnorm: input has %d channels but gamma has shape %s" % (x.shape[1], gamma.shape))
    count = x.shape[0] * x.shape[2]
    if training:
        if count < 2:
            raise ShapeException("batchnorm needs at least 2 values per channel in training mode, got %d" % (count,))
        mean = x.mean(axis=(0, 2))
        var = x.var(axis=(0, 2))
        runningMean *= 1.0 - momentum
        runningMean += momentum * mean
        runningVar *= 1.0 - momentum
        runningVar += momentum * var * (count / (count - 1.0))
    else:
        mean, var = runningMean, runningVar
    invStd = 1.0 / np.sqrt(var + eps)
    xhat = (x - mean[np.newaxis, :, np.newaxis]) * invStd[np.newaxis, :, np.newaxis]
    out = gamma[np.newaxis, :, np.newaxis] * xhat + beta[np.newaxis, :, np.newaxis]
    return out, (xhat, invStd, gamma, training)


def batchnormBackward(gradOut, cache):
    """Returns ``(gradX, gradGamma, gradBeta)`` for ``batchnormForward()``."""
    xhat, invStd, gamma, training = cache
    gradGamma = (gradOut * xhat).sum(axis=(0, 2))
    gradBeta = gradOut.sum(axis=(0, 2))
    dxhat = gradOut * gamma[np.newaxis, :, np.newaxis]
    scale = invStd[np.newaxis, :, np.newaxis]
    if not training:
        return dxhat * scale, gradGamma, gradBeta
    count = gradOut.shape[0] * gradOut.shape[2]
    gradX = (scale / count) * (
        count * dxhat
        - dxhat.sum(axis=(0, 2), keepdims=True)
        - xhat * (dxhat * xhat).sum(axis=(0, 2), keepdims=True)
    )
    return gradX, gradGamma, gradBeta


def relu(x):
    return np.maximum(x, 0)


def reluBackward(gradOut, x):
    return gradOut * (x > 0)


def adaptiveAvgPool(x):
    """Returns the mean over time of each channel, shaped batch x channel x 1."""
    _check3d(x)
    if x.shape[2] < 1:
        raise ShapeException("adaptiveAvgPool needs at least 1 time step")
    return x.mean(axis=2, keepdims=True)


def adaptiveAvgPoolBackward(gradOut, length):
    return np.repeat(gradOut / length, length, axis=2)


@_checkFinite
def linear(x, weight, bias):
    """Returns ``x @ weight.T + bias`` for ``x`` of shape batch x features (a trailing axis of size 1 is dropped)."""
    x2 = x.reshape(x.shape[0], -1)
    if x2.shape[1] != weight.shape[1]:
        raise ShapeException("linear: input has %d features but weight has shape %s" % (x2.shape[1], weight.shape))
    return x2 @ weight.T + bias


def linearBackward(gradOut, x, weight):
    """Returns ``(gradX, gradWeight, gradBias)`` for ``linear()``, with ``gradX`` in the shape of ``x``."""
    x2 = x.reshape(x.shape[0], -1)
    return (gradOut @ weight).reshape(x.shape), gradOut.T @ x2, gradOut.sum(axis=0)


def softmax(logits):
    shifted = logits - logits.max(axis=1, keepdims=True)
    e = np.exp(shifted)
    return e / e.sum(axis=1, keepdims=True)


@_checkFinite
def crossEntropy(logits, labels):
    """
    Returns ``(loss, gradLogits)``: the mean negative log-likelihood of the softmax of ``logits`` (batch x classes)
    for the integer ``labels``, and its gradient ``(softmax - onehot) / batch``.

    Raises:
      DatasetException: If a label is outside ``0 .. classes - 1``.
    """
    labels = np.asarray(labels, dtype=np.int64)
    batch, classes = logits.shape
    if labels.shape != (batch,):
        raise ShapeException("crossEntropy: %d logit rows but labels have shape %s" % (batch, labels.shape))
    if batch and (labels.min() < 0 or labels.max() >= classes):
        raise DatasetException("labels must be in 0..%d, got %s" % (classes - 1, sorted(set(labels.tolist()))))
    shifted = logits - logits.max(axis=1, keepdims=True)
    logProbs = shifted - np.log(np.exp(shifted).sum(axis=1, keepdims=True))
    rows = np.arange(batch)
    loss = -logProbs[rows, labels].mean()
    grad = np.exp(logProbs)
    grad[rows, labels] -= 1.0
    return loss, grad / batch


def adamInit(params):
    """Returns a fresh Adam state for a dict of parameter arrays."""
    return {
        "step": 0,
        "m": {name: np.zeros_like(p) for name, p in params.items()},
        "v": {name: np.zeros_like(p) for name, p in params.items()},
    }


def adamStep(params, grads, state, lr, beta1=0.9, beta2=0.98, eps=1e-9):
    """
    Applies one bias-corrected Adam update to the parameter arrays in the dict ``params`` (in place) and returns
    ``(params, state)``. ``state`` comes from ``adamInit()``; an empty dict is filled in.

    Raises:
      NonFiniteException: If a gradient holds NaN or infinite values.
    """
    for name, g in grads.items():
        if not np.all(np.isfinite(g)):
            raise NonFiniteException("gradient of %s has NaN or infinite values" % (name,))
    if not state:
        state.update(adamInit(params))
    state["step"] += 1
    t = state["step"]
    correction1 = 1.0 - beta1 ** t
    correction2 = 1.0 - beta2 ** t
    for name, g in grads.items():
        m = state["m"].setdefault(name, np.zeros_like(params[name]))
        v = state["v"].setdefault(name, np.zeros_like(params[name]))
        m *= beta1
        m += (1.0 - beta1) * g
        v *= beta2
        v += (1.0 - beta2) * g * g
        params[name] -= lr * (m / correction1) / (np.sqrt(v / correction2) + eps)
    return params, state


def stepLr(epoch, initialLr=0.001, stepSize=3, gamma=0.5):
    """Returns the learning rate for ``epoch``: ``initialLr * gamma ** (epoch // stepSize)``."""
    return initialLr * gamma ** (epoch // stepSize)


class EventCNN(object):
    """
    The event classifier: two blocks of a kernel-3 convolution (64 then 32 filters, padding 1) with ReLU and batch
    normalization, then average pooling over time and a fully connected layer giving one logit per class.

    ``layerOrder`` is ``'relu_bn'`` (convolution, ReLU, then batch normalization) or ``'bn_relu'``.

    Weights and biases are drawn uniformly from +/- 1/sqrt(fan_in). Parameters live in the ``params`` dict and batch
    normalization running statistics in ``buffers``, keyed like ``'conv1.weight'`` and ``'bn1.runningVar'``.
    """

    def __init__(self, inChannels, nClasses=NUM_CLASSES, seed=0, layerOrder=RELU_BN, dtype="float32",
                 bnMomentum=0.1, bnEps=1e-5, filters=(64, 32), kernel=3):
        if layerOrder not in LAYER_ORDERS:
            raise pyautolabel.ConfigurationException("layerOrder must be one of %s, not %r" % (LAYER_ORDERS,
                                                                                             layerOrder))
        self.inChannels = int(inChannels)
        self.nClasses = int(nClasses)
        self.layerOrder = layerOrder
        self.dtype = np.dtype(dtype)
        self.bnMomentum = bnMomentum
        self.bnEps = bnEps
        self.filters = tuple(filters)
        self.training = True
        self._cache = None

        rng = np.random.default_rng(seed)

        def uniform(shape, fanIn):
            bound = 1.0 / np.sqrt(fanIn)
            return rng.uniform(-bound, bound, size=shape).astype(self.dtype)

        self.params = {}
        self.buffers = {}
        channels = self.inChannels
        for i, width in enumerate(self.filters, start=1):
            self.params["conv%d.weight" % i] = uniform((width, channels, kernel), channels * kernel)
            self.params["conv%d.bias" % i] = uniform((width,), channels * kernel)
            self.params["bn%d.gamma" % i] = np.ones(width, dtype=self.dtype)
            self.params["bn%d.beta" % i] = np.zeros(width, dtype=self.dtype)
            self.buffers["bn%d.runningMean" % i] = np.zeros(width, dtype=self.dtype)
            self.buffers["bn%d.runningVar" % i] = np.ones(width, dtype=self.dtype)
            channels = width
        self.params["fc.weight"] = uniform((self.nClasses, channels), channels)
        self.params["fc.bias"] = uniform((self.nClasses,), channels)

    def train(self):
        self.training = True

    def eval(self):
        self.training = False

    def forward(self, x):
        """Returns the logits (batch x classes) for ``x`` (batch x inChannels x time)."""
        x = np.asarray(x, dtype=self.dtype)
        _check3d(x)
        if x.shape[1] != self.inChannels:
            raise ShapeException("EventCNN expects %d input channels, got %d" % (self.inChannels, x.shape[1]))
        p, b = self.params, self.buffers
        blockCaches = []
        h = x
        for i in range(1, len(self.filters) + 1):
            h, convCache = conv1dForward(h, p["conv%d.weight" % i], p["conv%d.bias" % i], 1)
            bnArgs = (p["bn%d.gamma" % i], p["bn%d.beta" % i], b["bn%d.runningMean" % i], b["bn%d.runningVar" % i],
                      self.training, self.bnMomentum, self.bnEps)
            if self.layerOrder == RELU_BN:
                preRelu = h
                h, bnCache = batchnormForward(relu(h), *bnArgs)
            else:
                h, bnCache = batchnormForward(h, *bnArgs)
                preRelu = h
                h = relu(h)
            blockCaches.append((convCache, preRelu, bnCache))
        pooled = adaptiveAvgPool(h)
        logits = linear(pooled, p["fc.weight"], p["fc.bias"])
        self._cache = (blockCaches, h.shape[2], pooled)
        return logits

    def backward(self, gradLogits):
        """Returns a dict of gradients, keyed like ``params``, for the last ``forward()`` call."""
        if self._cache is None:
            raise pyautolabel.PyAutoLabelException("backward() called before forward()")
        blockCaches, length, pooled = self._cache
        grads = {}
        g, grads["fc.weight"], grads["fc.bias"] = linearBackward(gradLogits, pooled, self.params["fc.weight"])
        g = adaptiveAvgPoolBackward(g, length)
        for i in range(len(self.filters), 0, -1):
            convCache, preRelu, bnCache = blockCaches[i - 1]
            if self.layerOrder == RELU_BN:
                g, grads["bn%d.gamma" % i], grads["bn%d.beta" % i] = batchnormBackward(g, bnCache)
                g = reluBackward(g, preRelu)
            else:
                g = reluBackward(g, preRelu)
                g, grads["bn%d.gamma" % i], grads["bn%d.beta" % i] = batchnormBackward(g, bnCache)
            g, grads["conv%d.weight" % i], grads["conv%d.bias" % i] = conv1dBackward(g, convCache)
        return grads

    def predictProba(self, x):
        return softmax(self.forward(x))

    def predict(self, x):
        return np.argmax(self.forward(x), axis=1)

    def stateDict(self):
        state = {name: value.copy() for name, value in self.params.items()}
        state.update((name, value.copy()) for name, value in self.buffers.items())
        return state

    def loadStateDict(self, state):
        for store in (self.params, self.buffers):
            for name in store:
                if name not in state:
                    raise FormatException("state is missing %s" % (name,))
                value = np.asarray(state[name], dtype=self.dtype)
                if value.shape != store[name].shape:
                    raise ShapeException("%s has shape %s, expected %s" % (name, value.shape, store[name].shape))
                store[name] = value.copy()

    def saveCheckpoint(self, path, **extra):
        """
        Writes the model to an ``.npz`` file: format version, architecture, parameters, running statistics, and any
        ``extra`` arrays (such as normalization statistics) under ``extra__<name>``.
        """
        arrays = {"param__" + name: value for name, value in self.stateDict().items()}
        arrays.update(("extra__" + name, np.asarray(value)) for name, value in extra.items())
        np.savez(
            path,
            version=np.array(CHECKPOINT_VERSION),
            inChannels=np.array(self.inChannels),
            nClasses=np.array(self.nClasses),
            filters=np.array(self.filters),
            layerOrder=np.array(self.layerOrder),
            dtype=np.array(self.dtype.name),
            **arrays
        )

    @classmethod
    def loadCheckpoint(cls, path):
        """
        Returns ``(model, extra)`` for a checkpoint written by ``saveCheckpoint()``; the model is in eval mode.

        Raises:
          FormatException: If the file can't be read or has an unsupported version.
        """
        try:
            with np.load(path, allow_pickle=False) as archive:
                contents = {name: archive[name] for name in archive.files}
        except (OSError, ValueError) as excObj:
            raise FormatException("Could not read checkpoint %s: %s" % (path, excObj))
        if int(contents.get("version", -1)) != CHECKPOINT_VERSION:
            raise FormatException("Checkpoint %s has unsupported version %s" % (path, contents.get("version")))
        model = cls(int(contents["inChannels"]), int(contents["nClasses"]), layerOrder=str(contents["layerOrder"]),
                    dtype=str(contents["dtype"]), filters=tuple(int(f) for f in contents["filters"]))
        model.loadStateDict({name[len("param__"):]: value for name, value in contents.items()
                             if name.startswith("param__")})
        model.eval()
        extra = {name[len("extra__"):]: value for name, value in contents.items() if name.startswith("extra__")}
        return model, extra
