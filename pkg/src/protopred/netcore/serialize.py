"""Single-file binary network format.

Layout (all little-endian):

    magic "PPNN", version u32
    input rank u32, dims u32*
    latent_tap string, view string, seed u64
    layer count u32
    per layer:
        kind tag u8, name string
        int-param count u32, i64*         (kind-specific, see _pack_spec)
        float-param count u32, f64*
        weight count u32
        per weight: name string, rank u32, dims u32*, f64 data

Strings are u32 length + UTF-8.  Loading validates the magic, version, and
shape composition (the stack is rebuilt through build_network), then checks
every weight tensor against the freshly inferred shapes.
"""

from __future__ import annotations

from pathlib import Path

import numpy as np

from ..binio import Reader, Writer
from ..errors import FormatError
from .layers import LayerSpec
from .network import Network, build_network

MAGIC = b"PPNN"
VERSION = 1

_KIND_TAGS = {"dense": 1, "relu": 2, "conv2d": 3, "conv1d": 4, "maxpool": 5,
              "dropout": 6, "gru": 7, "output": 8}
_TAG_KINDS = {v: k for k, v in _KIND_TAGS.items()}


def _pack_spec(spec: LayerSpec) -> tuple[list[int], list[float]]:
    ints = [spec.units, spec.filters, len(spec.kernel), *spec.kernel,
            len(spec.stride), *spec.stride, len(spec.pool), *spec.pool,
            int(spec.return_sequences)]
    floats = [spec.p]
    return ints, floats


def _unpack_spec(kind: str, name: str, ints: list[int], floats: list[float]) -> LayerSpec:
    it = iter(ints)
    units = next(it)
    filters = next(it)
    kernel = tuple(next(it) for _ in range(next(it)))
    stride = tuple(next(it) for _ in range(next(it)))
    pool = tuple(next(it) for _ in range(next(it)))
    return_sequences = bool(next(it))
    return LayerSpec(kind, name=name, units=units, filters=filters, kernel=kernel,
                     stride=stride, pool=pool, p=floats[0],
                     return_sequences=return_sequences)


def save_network(net: Network, path) -> None:
    w = Writer()
    w.raw(MAGIC)
    w.u32(VERSION)
    w.u32(len(net.input_shape))
    for d in net.input_shape:
        w.u32(d)
    w.string(net.latent_tap)
    w.string(net.view)
    w.u64(net.seed & ((1 << 64) - 1))
    w.u32(len(net.layers))
    for lay in net.layers:
        w.u8(_KIND_TAGS[lay.spec.kind])
        w.string(lay.name)
        ints, floats = _pack_spec(lay.spec)
        w.u32(len(ints))
        for v in ints:
            w.i64(v)
        w.u32(len(floats))
        for v in floats:
            w.f64(v)
        w.u32(len(lay.params))
        for key in sorted(lay.params):
            arr = lay.params[key]
            w.string(key)
            w.u32(arr.ndim)
            for d in arr.shape:
                w.u32(d)
            w.f64_array(arr)
    Path(path).write_bytes(w.getvalue())


def load_network(path) -> Network:
    data = Path(path).read_bytes()
    r = Reader(data, str(path))
    r.expect_magic(MAGIC)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported network format version {version}")
    rank = r.u32("input rank")
    input_shape = tuple(r.u32("input dim") for _ in range(rank))
    latent_tap = r.string("latent tap")
    view = r.string("view")
    seed = r.u64("seed")
    n_layers = r.u32("layer count")
    specs = []
    weights = []
    for _ in range(n_layers):
        tag = r.u8("kind tag")
        if tag not in _TAG_KINDS:
            raise FormatError(f"{path}: unknown layer kind tag {tag} at offset {r.offset - 1}")
        name = r.string("layer name")
        ints = [r.i64("int param") for _ in range(r.u32("int param count"))]
        floats = [r.f64("float param") for _ in range(r.u32("float param count"))]
        specs.append(_unpack_spec(_TAG_KINDS[tag], name, ints, floats))
        params = {}
        for _ in range(r.u32("weight count")):
            key = r.string("weight name")
            wrank = r.u32("weight rank")
            shape = tuple(r.u32("weight dim") for _ in range(wrank))
            params[key] = r.f64_array(int(np.prod(shape)) if shape else 1,
                                      "weight data").reshape(shape)
        weights.append(params)
    r.done()

    net = build_network(specs, input_shape, seed, latent_tap=latent_tap, view=view)
    for lay, params in zip(net.layers, weights):
        if set(params) != set(lay.params):
            raise FormatError(
                f"{path}: layer {lay.name!r} has weights {sorted(params)} "
                f"but expects {sorted(lay.params)}")
        for key, arr in params.items():
            if arr.shape != lay.params[key].shape:
                raise FormatError(
                    f"{path}: weight {lay.name}.{key} has shape {arr.shape}, "
                    f"expected {lay.params[key].shape}")
            lay.params[key] = arr
    return net
