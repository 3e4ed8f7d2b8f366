"""Chained training: a frozen front network feeds a second network.

The front network, trained on the original dataset, turns every sample of a
new dataset into a latent vector; the back network trains on those vectors
and exposes its own (smaller) latent tap.  Composite inference runs sample
-> front latent -> back latent -> nearest prototype.  The front network's
weights are never touched, which is the whole point: the original model
keeps its behavior while the pair adapts to the new data.
"""

from __future__ import annotations

import json
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import synthdata
from .clustering import LatentSet
from .errors import ConfigError
from .netcore import (
    LayerSpec,
    Network,
    TrainConfig,
    TrainResult,
    load_network,
    save_network,
    train,
)
from .netcore.network import forward_batch
from .prototypes import PrototypeSet, classify


@dataclass
class ChainModel:
    front: Network
    back: Network

    @property
    def back_tap_dim(self) -> int:
        return self.back.latent_dim

    def __post_init__(self) -> None:
        if self.back.input_shape != (self.front.latent_dim,):
            raise ConfigError(
                f"back network expects input {self.back.input_shape}, front "
                f"latent dim is {self.front.latent_dim}")


def extract_latents(net: Network, ds: synthdata.Dataset,
                    view: str | None = None) -> LatentSet:
    """One latent row per sample, labels and subject ids carried through.

    Runs in inference mode (dropout disabled), so extraction is pure and
    repeatable.  The modality view defaults to the one recorded on the
    network.
    """
    view = view or net.view
    if not view:
        raise ConfigError("network has no recorded view; pass view= explicitly")
    if not ds.samples:
        return LatentSet(vectors=np.zeros((0, net.latent_dim)),
                         labels=np.zeros(0, dtype=np.int64), source=ds.name,
                         tap=net.latent_tap, subject_ids=np.zeros(0, dtype=np.int64))
    pairs = synthdata.as_inputs(ds, view)
    xb = np.stack([x for x, _ in pairs])
    _, latents, _ = forward_batch(net, xb, training=False)
    return LatentSet(
        vectors=latents,
        labels=np.array([s.label for s in ds.samples], dtype=np.int64),
        source=ds.name,
        tap=net.latent_tap,
        subject_ids=np.array([s.subject_id for s in ds.samples], dtype=np.int64),
    )


def latents_as_inputs(latents: LatentSet) -> list[tuple[np.ndarray, float]]:
    return [(latents.vectors[i].copy(), float(latents.labels[i]))
            for i in range(len(latents))]


def chain_train(front: Network, ds_new: synthdata.Dataset,
                back_specs: list[LayerSpec], cfg: TrainConfig,
                valid_ds: synthdata.Dataset | None = None, balance: bool = True,
                balance_sigma: float = 0.01,
                latent_tap: str | None = None) -> tuple[ChainModel, TrainResult]:
    """Train the back network on the frozen front network's latents.

    The new dataset is class-balanced with noise augmentation before
    extraction (disable with balance=False).  The back network trains with
    the plain output loss; the front is bit-for-bit untouched.
    """
    if not ds_new.samples:
        raise ConfigError("chain training needs a nonempty dataset")
    from .netcore import build_network  # local import keeps module load light

    train_ds = ds_new
    if balance:
        counts = train_ds.label_counts()
        if counts[0] != counts[1]:
            train_ds = synthdata.augment_balance(train_ds, balance_sigma, cfg.seed)
    train_lat = extract_latents(front, train_ds)
    valid_pairs = None
    if valid_ds is not None and valid_ds.samples:
        valid_pairs = latents_as_inputs(extract_latents(front, valid_ds))
    back = build_network(back_specs, (front.latent_dim,), cfg.seed,
                         latent_tap=latent_tap, view="latent")
    back, history = train(back, latents_as_inputs(train_lat), valid_pairs, cfg)
    return ChainModel(front=front, back=back), history


def back_latents(chain: ChainModel, ds: synthdata.Dataset,
                 view: str | None = None) -> LatentSet:
    """Latents of the back network for a dataset routed through the front."""
    front_lat = extract_latents(chain.front, ds, view=view)
    if len(front_lat) == 0:
        return LatentSet(vectors=np.zeros((0, chain.back.latent_dim)),
                         labels=front_lat.labels, source=ds.name,
                         tap=chain.back.latent_tap, subject_ids=front_lat.subject_ids)
    _, latents, _ = forward_batch(chain.back, front_lat.vectors, training=False)
    return LatentSet(vectors=latents, labels=front_lat.labels, source=ds.name,
                     tap=chain.back.latent_tap, subject_ids=front_lat.subject_ids)


def composite_predict(chain: ChainModel, unified: PrototypeSet,
                      sample: synthdata.Sample) -> tuple[int, int, float]:
    """sample -> front latent -> back latent -> nearest unified prototype."""
    if unified.dim != chain.back_tap_dim:
        raise ConfigError(
            f"prototype set dim {unified.dim} does not match back latent dim "
            f"{chain.back_tap_dim}")
    ds = synthdata.Dataset(samples=[sample])
    lat = back_latents(chain, ds)
    return classify(unified, lat.vectors[0])


def save_chain(chain: ChainModel, directory) -> None:
    directory = Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    save_network(chain.front, directory / "front.ppnn")
    save_network(chain.back, directory / "back.ppnn")
    manifest = {
        "front": "front.ppnn",
        "back": "back.ppnn",
        "front_tap": chain.front.latent_tap,
        "back_tap": chain.back.latent_tap,
        "front_dim": chain.front.latent_dim,
        "back_dim": chain.back.latent_dim,
    }
    (directory / "chain.json").write_text(
        json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")


def load_chain(directory) -> ChainModel:
    directory = Path(directory)
    manifest = json.loads((directory / "chain.json").read_text(encoding="utf-8"))
    front = load_network(directory / manifest["front"])
    back = load_network(directory / manifest["back"])
    chain = ChainModel(front=front, back=back)
    if front.latent_dim != manifest["front_dim"] or back.latent_dim != manifest["back_dim"]:
        raise ConfigError(f"{directory}: manifest dims do not match the networks")
    return chain
