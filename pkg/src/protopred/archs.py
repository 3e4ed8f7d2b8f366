"""Desk-scale network architectures for each modality view.

The image views (dual, scan) use a plain CNN with two fully connected
layers tapped after the last one; they differ only in input channels, so
accuracy comparisons between them are about information, not architecture.
The volume view feeds its three slices through a shared conv encoder into
two stacked GRU layers and taps the second GRU's hidden state.  The back
network for chained training takes a bare latent vector and runs 1-D
convolutions over it, a pooling and dropout stage, and two fully connected
layers tapped at the last.
"""

from __future__ import annotations

from . import synthdata
from .errors import ConfigError
from .netcore import (
    LayerSpec,
    Network,
    build_network,
    conv1d,
    conv2d,
    dense,
    dropout,
    gru,
    maxpool,
    output,
    relu,
)


def view_specs(view: str, latent_dim: int = 32, base_filters: int = 8,
               dropout_p: float = 0.25) -> tuple[list[LayerSpec], str]:
    """(layer specs, latent tap name) for a modality view."""
    if view in ("dual", "scan"):
        specs = [
            conv2d(base_filters, 5, 5, stride=2),
            relu(),
            maxpool(2),
            dense(2 * latent_dim),
            relu(),
            dense(latent_dim),
            relu(),
            dropout(dropout_p),
            output(),
        ]
        return specs, "relu-2"
    if view == "volume":
        # The dense+relu head puts the latent tap in the same geometry as
        # the image views' taps (nonnegative, unbounded), which is what a
        # reference prototype set from those networks lives in.
        specs = [
            conv2d(base_filters, 5, 5, stride=2),
            relu(),
            maxpool(2),
            gru(latent_dim, return_sequences=True),
            gru(latent_dim),
            dense(latent_dim),
            relu(),
            dropout(dropout_p),
            output(),
        ]
        return specs, "relu-1"
    raise ConfigError(f"no default architecture for view {view!r}")


def back_specs(latent_dim: int = 16, filters: int = 8,
               dropout_p: float = 0.2) -> tuple[list[LayerSpec], str]:
    """Back-network stack for a latent-vector input: two 1-D convolutions,
    max pooling, dropout, and two fully connected layers tapped at the last."""
    specs = [
        conv1d(filters, 3),
        relu(),
        conv1d(filters, 3),
        relu(),
        maxpool((2,)),
        dropout(dropout_p),
        dense(4 * latent_dim),
        relu(),
        dense(latent_dim),
        relu(),
        output(),
    ]
    return specs, "relu-3"


def build_view_network(view: str, image_size: int, channels: int, seed: int,
                       latent_dim: int = 32, base_filters: int = 6,
                       dropout_p: float = 0.5) -> Network:
    specs, tap = view_specs(view, latent_dim=latent_dim, base_filters=base_filters,
                            dropout_p=dropout_p)
    input_shape = synthdata.view_input_shape(image_size, channels, view)
    return build_network(specs, input_shape, seed, latent_tap=tap, view=view)
