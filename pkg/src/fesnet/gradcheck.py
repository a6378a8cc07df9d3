"""Finite-difference verification of analytic backward passes.

The scalar objective is L = sum(forward(x) * projection) for a fixed
random projection, so d L / d coordinate can be compared between the
layer's backward pass and central differences. Checks must run at
64-bit precision; the default step of 1e-5 keeps truncation and
round-off error both well below the 1e-4 acceptance tolerance.

The projection is scaled so the objective's summation has a small
cancellation scale: coordinates with an exactly-zero analytic gradient
(a conv bias feeding batch norm, say) then measure finite-difference
round-off that sits safely below the 1e-8 floor of the error metric,
while relative errors of nonzero gradients are unaffected by the
common factor.
"""

from __future__ import annotations

import numpy as np

from .layers import softmax_channels_backward

DEFAULT_EPSILON = 1e-5
_PROJ_SCALE = 1e-4


def _relative_error(analytic: float, numeric: float) -> float:
    return abs(analytic - numeric) / max(abs(analytic), abs(numeric), 1e-8)


def _sample_coords(shape, max_coords, rng):
    size = int(np.prod(shape))
    if max_coords is None or size <= max_coords:
        flat = np.arange(size)
    else:
        flat = rng.choice(size, size=max_coords, replace=False)
    return [np.unravel_index(int(i), shape) for i in flat]


def _central_diff(feval, arr, idx, epsilon):
    orig = arr[idx]
    arr[idx] = orig + epsilon
    hi = feval()
    arr[idx] = orig - epsilon
    lo = feval()
    arr[idx] = orig
    return (hi - lo) / (2.0 * epsilon)


def gradcheck(layer, x: np.ndarray, epsilon: float = DEFAULT_EPSILON,
              max_coords: int | None = None, seed: int = 0,
              backward=None) -> float:
    """Max relative error between analytic and numeric gradients.

    ``layer`` needs ``forward(x, train)``, ``backward(dy)`` and ``params()``.
    Input and parameter gradients are both checked. ``backward`` overrides
    how the analytic pass is launched from the projection (used for the
    full model, whose backward takes the gradient at the logits).
    """
    x = np.array(x, dtype=np.float64)  # private copy: coordinates are perturbed in place
    rng = np.random.default_rng(seed)
    y = layer.forward(x, train=True)
    proj = rng.standard_normal(y.shape)
    cancel = float(np.abs(y * proj).sum())
    proj *= _PROJ_SCALE / max(cancel, 1e-6)

    if backward is None:
        dx = layer.backward(proj)
    else:
        dx = backward(layer, y, proj)
    grads = [(dx, x)] + [(p.grad.copy(), p.value) for p in layer.params()]

    def objective():
        return float((layer.forward(x, train=True) * proj).sum())

    worst = 0.0
    for analytic, arr in grads:
        for idx in _sample_coords(arr.shape, max_coords, rng):
            numeric = _central_diff(objective, arr, idx, epsilon)
            worst = max(worst, _relative_error(float(analytic[idx]), numeric))
    return worst


def gradcheck_probability_model(model, x: np.ndarray, epsilon: float = 1e-6,
                                max_coords: int | None = 4, seed: int = 0) -> float:
    """Gradient check for a model whose forward emits softmax probabilities.

    The model's ``backward`` consumes the gradient at the logits, so the
    projection is first pulled back through the softmax. A smaller default
    step keeps sampled coordinates clear of ReLU kinks deep in the graph.
    """

    def launch(mdl, probs, proj):
        return mdl.backward(softmax_channels_backward(probs, proj))

    return gradcheck(model, x, epsilon=epsilon, max_coords=max_coords,
                     seed=seed, backward=launch)


def run_gradcheck_suite():
    """64-bit finite-difference checks over every layer type and the full
    network; returns ``[(name, max_rel_err, tolerance), ...]``."""
    from .layers import BatchNorm2d, Conv2d, ConvSpec, ConvTranspose2d, ReLU, SeparableConv2d
    from .model import ArchConfig, FeatureEnhancementBlock, FesNet, PromptConvBlock

    rng = np.random.default_rng(7)
    f64 = np.float64
    results = []

    def add(name, layer, x, tol=1e-4, **kw):
        results.append((name, gradcheck(layer, x, **kw), tol))

    x = rng.standard_normal((2, 3, 6, 6))
    add("conv 3x3 pad1", Conv2d(ConvSpec(3, 3, 3, 4, padding=1), rng, f64), x)
    add("conv 1x1 (linear)", Conv2d(ConvSpec(1, 1, 3, 4), rng, f64), x, tol=1e-7)
    add("conv 3x3 stride2", Conv2d(ConvSpec(3, 3, 3, 4, stride=2, padding=1), rng, f64), x)
    add("conv 3x3 dilation2", Conv2d(ConvSpec(3, 3, 3, 4, dilation=2, padding=2), rng, f64),
        rng.standard_normal((1, 3, 8, 8)))
    add("conv depthwise", Conv2d(ConvSpec(3, 3, 4, 4, padding=1, depthwise=True), rng, f64),
        rng.standard_normal((2, 4, 5, 5)))
    add("separable conv", SeparableConv2d(3, 5, rng=rng, dtype=f64), x)
    add("transposed conv s2", ConvTranspose2d(3, 4, 2, rng=rng, dtype=f64), x)
    add("transposed conv s4", ConvTranspose2d(3, 2, 4, rng=rng, dtype=f64),
        rng.standard_normal((1, 3, 3, 3)))
    add("batchnorm (train)", BatchNorm2d(4, dtype=f64),
        rng.standard_normal((3, 4, 5, 5)))
    xr = rng.standard_normal((2, 3, 5, 5))
    xr += 0.2 * np.sign(xr)  # keep coordinates off the kink
    add("relu", ReLU(), xr)
    add("prompt conv block",
        PromptConvBlock(3, 4, rng=np.random.default_rng(3), dtype=f64),
        rng.standard_normal((1, 3, 8, 8)), epsilon=1e-6, max_coords=40)
    add("enhancement block",
        FeatureEnhancementBlock(4, widths=(8, 16, 16, 16), rng=np.random.default_rng(4), dtype=f64),
        rng.standard_normal((1, 4, 6, 6)), epsilon=1e-6, max_coords=40)

    # Batch 2: with one 16x16 image the deepest map is 1x1 spatial and batch
    # norm over a single value parks every deep ReLU exactly on its kink.
    model = FesNet(ArchConfig(), rng=np.random.default_rng(5), dtype=f64)
    err = gradcheck_probability_model(model, rng.standard_normal((2, 3, 16, 16)),
                                      epsilon=1e-6, max_coords=3, seed=11)
    results.append(("full network (sampled)", err, 1e-3))
    return results
