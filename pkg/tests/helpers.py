"""Shared oracles and fixtures-as-functions for the test suite."""
import numpy as np

from landmark_curves.autograd import Tensor
from landmark_curves.autograd import tensor as T
from landmark_curves.backbone import FeaturePyramid
from landmark_curves.config import Config


def bilinear_oracle(fmap, x, y):
    """Scalar-loop bilinear lookup with texel centers at (c+0.5)/W and edge clamping."""
    c, h, w = fmap.shape
    px = min(max(x * w - 0.5, 0.0), w - 1)
    py = min(max(y * h - 0.5, 0.0), h - 1)
    x0, y0 = int(np.floor(px)), int(np.floor(py))
    x1, y1 = min(x0 + 1, w - 1), min(y0 + 1, h - 1)
    fx, fy = px - x0, py - y0
    return ((1 - fx) * (1 - fy) * fmap[:, y0, x0] + fx * (1 - fy) * fmap[:, y0, x1]
            + (1 - fx) * fy * fmap[:, y1, x0] + fx * fy * fmap[:, y1, x1])


def small_config(**kw):
    base = dict(image_size=64, channels=16, encoder_widths=(8, 8, 8, 8), hidden_dim=32, heads=4,
                sampling_points=2, num_proposals=3, num_ref_points=8, seed=3)
    base.update(kw)
    return Config(**base).validate()


def random_pyramid(rng, cfg, size):
    return FeaturePyramid(*[Tensor(rng.normal(size=(cfg.channels, size // s, size // s)))
                            for s in (4, 8, 16, 32)])


class RecordingPyramid:
    """Pyramid wrapper that remembers which levels were read."""

    def __init__(self, inner):
        self.inner = inner
        self.accessed = set()

    def level(self, i):
        self.accessed.add(i)
        return self.inner.level(i)

    def __getattr__(self, name):
        if name in ("f1", "f2", "f3", "f4"):
            self.accessed.add(int(name[1]))
        return getattr(self.inner, name)

    def __iter__(self):
        self.accessed.update((1, 2, 3, 4))
        return iter(self.inner)


def zero_offset_heads(refiner):
    for stage in refiner.stages:
        last = stage.offset_mlp.layers[-1]
        last.weight.data[:] = 0.0
        last.bias.data[:] = 0.0


# differentiable primitives exercised by the gradient checks, keyed by name
UNARY = {
    "neg": T.neg,
    "exp": T.exp,
    "log": lambda a: T.log(T.exp(a) + 0.5),
    "sqrt": lambda a: T.sqrt(a * a + 0.3),
    "abs": lambda a: T.tabs(a + 0.05),
    "relu": lambda a: T.relu(a + 0.05),
    "sigmoid": T.sigmoid,
    "logit": lambda a: T.logit(T.sigmoid(a) * 0.8 + 0.1),
    "clip": lambda a: T.clip(a, -0.7, 0.7),
    "pow": lambda a: (a * a + 1.0) ** 1.5,
    "sin": T.sin,
    "cos": T.cos,
    "softmax": lambda a: T.softmax(a, axis=-1),
    "layer_norm": lambda a: T.layer_norm(a) if a.shape[-1] > 1 else a,
    "sum_axis": lambda a: T.tsum(a, axis=0),
    "mean_axis": lambda a: T.mean(a, axis=-1, keepdims=True),
    "transpose": lambda a: T.transpose(a),
    "reshape": lambda a: T.reshape(a, (-1,)),
    "getitem": lambda a: a[..., :1],
    "gather": lambda a: a[np.array([0, 0, 1]) % a.shape[0]],
    "concat": lambda a: T.concat([a, a * 2.0], axis=0),
    "stack": lambda a: T.stack([a, a * a], axis=-1),
    "broadcast": lambda a: T.broadcast_to(a, (2,) + a.shape),
}

BINARY = {
    "add": T.add,
    "sub": T.sub,
    "mul": T.mul,
    "div": lambda a, b: T.div(a, b * b + 0.5),
}
