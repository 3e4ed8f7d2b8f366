"""Cluster-center-guided training for modality-limited networks.

The composite objective mixes the plain output loss F1 with a latent term
F2 that pulls each sample's latent toward its nearest center in a reference
prototype set (built from a network that saw both modalities) and away from
the others:

    F = lambda * F1 + (1 - lambda) * F2
    F1 = mean_n (y_n - z_n)^2
    F2 = mean_{m,n} (u(m,n) - (1 - f(E(m,n))))^2

E(m,n) is the squared distance between latent n and reference center m, u
is the one-hot nearest-center target, and f squashes the (scaled) energies.
Two squash modes are provided: "softmax-over-clusters", a softmax over the
L energies of each sample (the default), and "logistic", an elementwise
sigmoid(scale * (E - bias)).  The softmax targets are unattainable for
L > 2 (the L-1 unselected entries would each need f = 1, but a softmax sums
to 1); the logistic mode has no such coupling.  Both modes are gradient
checked.

Targets are recomputed from the current latents at the start of every
epoch.  When scale (and bias, in logistic mode) is left unset it is frozen
to the median energy of the first training batch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from . import synthdata
from .clustering import LatentSet
from .errors import ConfigError
from .netcore import Network, TrainConfig, TrainResult
from .netcore.losses import LossTerms
from .netcore.network import batch_gradients, forward_batch
from .netcore.training import run_training
from .prototypes import PrototypeSet

SQUASH_MODES = ("softmax-over-clusters", "logistic")


@dataclass
class AdaptationTargets:
    """One-hot nearest-reference-center matrix, one column per sample."""

    u: np.ndarray   # (L, N) of {0, 1}

    def __post_init__(self) -> None:
        self.u = np.asarray(self.u, dtype=np.float64)
        if self.u.ndim != 2:
            raise ConfigError(f"targets must be 2-D, got shape {self.u.shape}")
        if not np.all((self.u == 0.0) | (self.u == 1.0)):
            raise ConfigError("target entries must be 0 or 1")
        sums = self.u.sum(axis=0)
        if self.u.shape[1] and not np.all(sums == 1.0):
            raise ConfigError("every target column must have exactly one 1")

    @property
    def n_clusters(self) -> int:
        return self.u.shape[0]

    @property
    def n_samples(self) -> int:
        return self.u.shape[1]


@dataclass
class AdaptLossConfig:
    lam: float
    reference: PrototypeSet
    squash: str = "softmax-over-clusters"
    scale: float | None = None   # None: freeze 1/median(E) on the first batch
    bias: float | None = None    # logistic only; None: freeze median(E)

    def __post_init__(self) -> None:
        if not 0.0 <= self.lam <= 1.0:
            raise ConfigError(f"lambda must be in [0,1], got {self.lam}")
        if self.squash not in SQUASH_MODES:
            raise ConfigError(f"squash must be one of {SQUASH_MODES}, got {self.squash!r}")
        if self.scale is not None and not self.scale > 0:
            raise ConfigError(f"scale must be positive, got {self.scale}")
        if not self.reference.prototypes:
            raise ConfigError("reference prototype set is empty")


@dataclass
class LossBreakdown:
    f1: float
    f2: float
    total: float

    def __post_init__(self) -> None:
        if self.f1 < 0 or self.f2 < 0 or self.total < 0:
            raise ConfigError("loss terms must be nonnegative")


def loss_total(f1: float, f2: float, lam: float) -> LossBreakdown:
    """Exact convex combination lambda*f1 + (1-lambda)*f2."""
    if not 0.0 <= lam <= 1.0:
        raise ConfigError(f"lambda must be in [0,1], got {lam}")
    return LossBreakdown(f1=float(f1), f2=float(f2),
                         total=lam * float(f1) + (1.0 - lam) * float(f2))


def residual_energies(latents: LatentSet, reference: PrototypeSet) -> np.ndarray:
    """E with E[m, n] = squared Euclidean distance of latent n to center m."""
    if latents.dim != reference.dim:
        raise ConfigError(
            f"latents have dimension {latents.dim}, reference has {reference.dim}")
    diff = reference.centers()[:, None, :] - latents.vectors[None, :, :]
    return np.einsum("mnd,mnd->mn", diff, diff)


def assign_targets(latents: LatentSet, reference: PrototypeSet) -> AdaptationTargets:
    """One-hot column per sample at its nearest reference center (ties -> lowest)."""
    e = residual_energies(latents, reference)
    idx = e.argmin(axis=0)
    u = np.zeros_like(e)
    u[idx, np.arange(e.shape[1])] = 1.0
    return AdaptationTargets(u=u)


def _squash(e: np.ndarray, squash: str, scale: float, bias: float) -> np.ndarray:
    if squash == "softmax-over-clusters":
        z = scale * e
        z = z - z.max(axis=0, keepdims=True)
        ez = np.exp(z)
        return ez / ez.sum(axis=0, keepdims=True)
    a = scale * (e - bias)
    out = np.empty_like(a)
    pos = a >= 0
    out[pos] = 1.0 / (1.0 + np.exp(-a[pos]))
    ea = np.exp(a[~pos])
    out[~pos] = ea / (1.0 + ea)
    return out


def loss_f2(e: np.ndarray, targets: AdaptationTargets, squash: str = "softmax-over-clusters",
            scale: float = 1.0, bias: float = 0.0) -> float:
    """Mean over all (cluster, sample) cells of (u - (1 - f(E)))^2."""
    e = np.asarray(e, dtype=np.float64)
    if e.shape != targets.u.shape:
        raise ConfigError(f"E has shape {e.shape}, targets have {targets.u.shape}")
    if squash not in SQUASH_MODES:
        raise ConfigError(f"squash must be one of {SQUASH_MODES}, got {squash!r}")
    if not scale > 0:
        raise ConfigError(f"scale must be positive, got {scale}")
    f = _squash(e, squash, scale, bias)
    g = targets.u - (1.0 - f)
    return float(np.mean(g * g))


class CompositeAdaptLoss:
    """Batch loss implementing the lambda * F1 + (1 - lambda) * F2 objective.

    u columns must align with the batch sample order.  The F2 gradient flows
    through the latent tap with the full squash Jacobian (softmax couples
    the L energies of a sample; logistic is elementwise).  At lambda = 1 the
    F2 gradient path is skipped entirely, so updates are bit-identical to
    the plain output loss while F2 is still reported.
    """

    def __init__(self, centers: np.ndarray, u: np.ndarray, lam: float,
                 squash: str, scale: float, bias: float) -> None:
        self.centers = centers
        self.u = u
        self.lam = lam
        self.squash = squash
        self.scale = scale
        self.bias = bias

    def terms(self, preds, targets, latents):
        b = len(preds)
        if self.u.shape[1] != b:
            raise ConfigError(f"targets have {self.u.shape[1]} columns, batch has {b}")
        n_clusters = self.centers.shape[0]
        r = preds - targets
        f1 = float(np.mean(r * r))

        diff = self.centers[:, None, :] - latents[None, :, :]   # (L, B, M)
        e = np.einsum("mnd,mnd->mn", diff, diff)
        f = _squash(e, self.squash, self.scale, self.bias)
        g = self.u - (1.0 - f)
        f2 = float(np.mean(g * g))
        total = self.lam * f1 + (1.0 - self.lam) * f2

        dpreds = self.lam * (2.0 * r / b)
        dlatents = None
        if self.lam < 1.0:
            if self.squash == "softmax-over-clusters":
                gf = np.einsum("mn,mn->n", g, f)
                de = (2.0 * self.scale / (n_clusters * b)) * f * (g - gf[None, :])
            else:
                de = (2.0 / (n_clusters * b)) * g * self.scale * f * (1.0 - f)
            # dF2/dv_n = sum_m de[m,n] * 2 (v_n - c_m)
            dlatents = 2.0 * (de.sum(axis=0)[:, None] * latents - de.T @ self.centers)
            dlatents = (1.0 - self.lam) * dlatents
        return LossTerms(f1=f1, f2=f2, total=total), dpreds, dlatents


def _resolve_squash_constants(cfg: AdaptLossConfig, e: np.ndarray) -> tuple[float, float]:
    """Freeze scale/bias from a batch's energies when the config left them unset."""
    med = float(np.median(e)) if e.size else 0.0
    scale = cfg.scale if cfg.scale is not None else (1.0 / med if med > 0 else 1.0)
    bias = cfg.bias if cfg.bias is not None else med
    return scale, bias


def adapt_gradients(net: Network, batch, cfg: AdaptLossConfig,
                    targets: AdaptationTargets):
    """Exact gradients of the composite objective for one batch.

    batch: list of (x, target); targets' columns correspond to the batch
    samples in order.  No weight mutation; dropout disabled, matching the
    plain backward op.
    """
    if cfg.reference.dim != net.latent_dim:
        raise ConfigError(
            f"reference dim {cfg.reference.dim} does not match latent dim "
            f"{net.latent_dim}")
    if not batch:
        raise ConfigError("adapt_gradients needs a nonempty batch")
    if targets.n_samples != len(batch):
        raise ConfigError(
            f"targets have {targets.n_samples} columns, batch has {len(batch)}")
    if targets.n_clusters != len(cfg.reference):
        raise ConfigError(
            f"targets have {targets.n_clusters} rows, reference has "
            f"{len(cfg.reference)} prototypes")
    xb = np.stack([np.asarray(x, dtype=np.float64) for x, _ in batch])
    yb = np.asarray([float(t) for _, t in batch])
    centers = cfg.reference.centers()
    _, latents, _ = forward_batch(net, xb, training=False)
    diff = centers[:, None, :] - latents[None, :, :]
    e = np.einsum("mnd,mnd->mn", diff, diff)
    scale, bias = _resolve_squash_constants(cfg, e)
    loss = CompositeAdaptLoss(centers, targets.u, cfg.lam, cfg.squash, scale, bias)
    _, grads = batch_gradients(net, xb, yb, loss, training=False)
    return grads


def adapt_train(net: Network, mri_only: synthdata.Dataset, cfg: TrainConfig,
                acfg: AdaptLossConfig,
                valid: synthdata.Dataset | None = None) -> tuple[Network, TrainResult]:
    """Train a volume-only network against a dual-modality reference set.

    Targets u are recomputed from the current latents at every epoch start;
    the history records f1, f2, and the total per epoch.  With lambda = 1
    the run is bit-identical to plain training under the same seed.
    """
    if net.view != "volume":
        raise ConfigError(
            f"adapt_train expects a volume-view network, got view {net.view!r}")
    if acfg.reference.dim != net.latent_dim:
        raise ConfigError(
            f"reference dim {acfg.reference.dim} does not match latent dim "
            f"{net.latent_dim}")
    if not mri_only.samples:
        raise ConfigError("training set is empty")
    pairs = synthdata.as_inputs(mri_only, "volume")
    xtr = np.stack([x for x, _ in pairs])
    ytr = np.asarray([t for _, t in pairs])
    xva = yva = None
    if valid is not None and valid.samples:
        vpairs = synthdata.as_inputs(valid, "volume")
        xva = np.stack([x for x, _ in vpairs])
        yva = np.asarray([t for _, t in vpairs])

    centers = acfg.reference.centers()
    frozen: dict[str, float] = {}

    def on_epoch_start(network, epoch):
        _, latents, _ = forward_batch(network, xtr, training=False)
        diff = centers[:, None, :] - latents[None, :, :]
        e = np.einsum("mnd,mnd->mn", diff, diff)
        idx = e.argmin(axis=0)
        u_full = np.zeros_like(e)
        u_full[idx, np.arange(e.shape[1])] = 1.0
        return {"u": u_full, "energies": e}

    def make_loss(state, batch_idx):
        if "scale" not in frozen:
            scale, bias = _resolve_squash_constants(
                acfg, state["energies"][:, batch_idx])
            frozen["scale"] = scale
            frozen["bias"] = bias
        return CompositeAdaptLoss(centers, state["u"][:, batch_idx], acfg.lam,
                                  acfg.squash, frozen["scale"], frozen["bias"])

    net, result = run_training(net, xtr, ytr, cfg, make_loss, xva=xva, yva=yva,
                               on_epoch_start=on_epoch_start)
    result.scale = frozen.get("scale")
    result.bias = frozen.get("bias")
    return net, result
