"""Network construction, forward pass with latent tap, and backpropagation.

A network is an ordered stack of named layers ending in a single logistic
output unit.  One layer is designated the latent tap; its flattened output
is the latent vector returned by every forward pass and the injection point
for losses defined on the latent (see the adapt module).
"""

from __future__ import annotations

import copy
from dataclasses import dataclass, field

import numpy as np

from .. import rng
from ..errors import ConfigError, NonFiniteError, ShapeMismatchError
from .layers import Layer, LayerSpec, make_layer
from .losses import BatchLoss, MeanSquaredOutputLoss


@dataclass
class Network:
    layers: list[Layer]
    input_shape: tuple[int, ...]
    latent_tap: str
    latent_dim: int
    tap_index: int
    seed: int
    view: str = ""

    def layer(self, name: str) -> Layer:
        for lay in self.layers:
            if lay.name == name:
                return lay
        raise KeyError(name)

    def weight_bytes(self) -> bytes:
        """Concatenated raw bytes of all parameters, for identity checks."""
        chunks = []
        for lay in self.layers:
            for key in sorted(lay.params):
                chunks.append(np.ascontiguousarray(lay.params[key]).tobytes())
        return b"".join(chunks)

    def copy(self) -> "Network":
        return copy.deepcopy(self)


def _assign_names(specs: list[LayerSpec]) -> list[LayerSpec]:
    counters: dict[str, int] = {}
    named = []
    seen = set()
    for spec in specs:
        spec = LayerSpec(**vars(spec))
        if not spec.name:
            idx = counters.get(spec.kind, 0)
            counters[spec.kind] = idx + 1
            spec.name = f"{spec.kind}-{idx}"
        if spec.name in seen:
            raise ConfigError(f"duplicate layer name {spec.name!r}")
        seen.add(spec.name)
        named.append(spec)
    return named


def build_network(specs: list[LayerSpec], input_dims: tuple[int, ...], seed: int,
                  latent_tap: str | None = None, view: str = "") -> Network:
    """Compose a layer stack, validate shapes, and initialize weights.

    Unnamed layers are auto-named "<kind>-<i>" with a per-kind counter.  The
    latent tap defaults to the layer just before the output layer.  Weights
    are drawn from a per-(seed, layer, parameter) splitmix64 stream, scaled
    uniform in +-sqrt(6/(fan_in+fan_out)); the same seed always yields
    bit-identical weights.
    """
    if not specs:
        raise ConfigError("network needs at least one layer")
    named = _assign_names(specs)
    if named[-1].kind != "output":
        raise ShapeMismatchError("network must end with an output layer")
    for spec in named[:-1]:
        if spec.kind == "output":
            raise ShapeMismatchError(f"output layer {spec.name!r} must be last")

    layers = []
    shape = tuple(int(d) for d in input_dims)
    prev = "input"
    for spec in named:
        lay = make_layer(spec)
        lay.in_shape = shape
        try:
            out = lay.infer_shape(shape)
        except ShapeMismatchError as exc:
            raise ShapeMismatchError(f"{prev} -> {spec.name}: {exc}") from None
        lay.out_shape = out
        layers.append(lay)
        shape = out
        prev = spec.name

    if latent_tap is None:
        if len(layers) < 2:
            raise ConfigError("cannot default the latent tap on a 1-layer network")
        latent_tap = layers[-2].name
    tap_index = None
    for i, lay in enumerate(layers):
        if lay.name == latent_tap:
            tap_index = i
    if tap_index is None:
        raise ConfigError(f"latent tap {latent_tap!r} names no layer")
    latent_dim = int(np.prod(layers[tap_index].out_shape)) if layers[tap_index].out_shape else 1

    net = Network(layers=layers, input_shape=tuple(int(d) for d in input_dims),
                  latent_tap=latent_tap, latent_dim=latent_dim,
                  tap_index=tap_index, seed=int(seed), view=view)
    for lay in layers:
        lay.init(net.seed)
    return net


def forward_batch(net: Network, xb: np.ndarray, training: bool = False,
                  gen: np.random.Generator | None = None, keep_cache: bool = False):
    """Batched forward pass.

    xb: (B,) + net.input_shape.  Returns (preds (B,), latents (B, M),
    caches) where caches is None unless keep_cache.
    """
    if xb.shape[1:] != net.input_shape:
        raise ShapeMismatchError(
            f"input shape {xb.shape[1:]} does not match network input {net.input_shape}")
    x = np.ascontiguousarray(xb, dtype=np.float64)
    caches = [] if keep_cache else None
    latent = None
    for i, lay in enumerate(net.layers):
        x, cache = lay.forward(x, training, gen)
        if keep_cache:
            caches.append(cache)
        if i == net.tap_index:
            latent = x.reshape(x.shape[0], -1)
    return x, latent, caches


def forward(net: Network, x: np.ndarray, training: bool = False,
            gen: np.random.Generator | None = None) -> tuple[float, np.ndarray]:
    """Single-sample forward pass: (prediction in [0,1], latent vector).

    With training=False the pass is deterministic and never mutates the
    network (dropout disabled).  With training=True dropout draws from `gen`
    (defaulting to a generator derived from the network seed).
    """
    x = np.asarray(x, dtype=np.float64)
    if x.shape != net.input_shape:
        raise ShapeMismatchError(
            f"input shape {x.shape} does not match network input {net.input_shape}")
    if training and gen is None:
        gen = rng.spawn(net.seed, "forward-dropout")
    preds, latents, _ = forward_batch(net, x[None], training=training, gen=gen)
    pred = float(preds[0])
    latent = latents[0].copy()
    if not np.isfinite(pred) or not np.all(np.isfinite(latent)):
        raise NonFiniteError("forward pass produced a non-finite value")
    return pred, latent


def batch_gradients(net: Network, xb: np.ndarray, yb: np.ndarray, loss: BatchLoss,
                    training: bool = False, gen: np.random.Generator | None = None):
    """Gradients of the mean batch loss for every parameter.

    Returns (terms, grads) where grads maps layer name -> param name ->
    gradient array.  Weights are never mutated.
    """
    preds, latents, caches = forward_batch(net, xb, training=training, gen=gen,
                                           keep_cache=True)
    terms, dpreds, dlatents = loss.terms(preds, yb, latents)
    grads: dict[str, dict[str, np.ndarray]] = {}
    d = dpreds
    for i in reversed(range(len(net.layers))):
        lay = net.layers[i]
        if i == net.tap_index and dlatents is not None:
            d = d + dlatents.reshape(d.shape)
        d, layer_grads = lay.backward(d, caches[i])
        if layer_grads:
            grads[lay.name] = layer_grads
    return terms, grads


def resolve_loss(loss) -> BatchLoss:
    if isinstance(loss, str):
        if loss == "mse_output":
            return MeanSquaredOutputLoss()
        raise ConfigError(f"unknown loss {loss!r} (expected 'mse_output' or a loss object)")
    if hasattr(loss, "terms"):
        return loss
    raise ConfigError(f"unknown loss {loss!r}")


def backward(net: Network, batch, loss="mse_output"):
    """Per-weight gradients of the mean batch loss; no weight mutation.

    batch: list of (x, target) pairs.  loss: "mse_output" or any object with
    a .terms(preds, targets, latents) method (see adapt.CompositeAdaptLoss).
    Runs in inference mode (dropout disabled) so gradients are well-defined
    for finite-difference comparison.
    """
    loss_obj = resolve_loss(loss)
    if not batch:
        raise ConfigError("backward needs a nonempty batch")
    xb = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
    yb = np.asarray([float(t) for _, t in batch])
    _, grads = batch_gradients(net, xb, yb, loss_obj, training=False)
    return grads
