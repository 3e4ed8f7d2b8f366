"""k-means++ clustering of latent vectors and occupancy reporting.

Seeding follows the classic D^2 sampling, then Lloyd iterations run until
the largest center displacement drops below `tol` or `max_iters` is hit.
Empty clusters are re-seeded from the point farthest from its assigned
center so the cluster count stays fixed.  Ties in every nearest-center
decision break toward the lowest index; the same helper backs prototype
classification so the two always agree.
"""

from __future__ import annotations

from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import rng
from .errors import ConfigError, FormatError


@dataclass
class LatentSet:
    """Latent vectors with their sample labels.

    subject_ids is optional metadata used by per-subject reports; it is not
    part of the wire format contract.
    """

    vectors: np.ndarray           # (N, M)
    labels: np.ndarray            # (N,) of {0,1}
    source: str = ""
    tap: str = ""
    subject_ids: np.ndarray | None = None

    def __post_init__(self) -> None:
        self.vectors = np.asarray(self.vectors, dtype=np.float64)
        self.labels = np.asarray(self.labels, dtype=np.int64)
        if self.vectors.ndim != 2:
            raise ConfigError(f"latent vectors must be 2-D, got shape {self.vectors.shape}")
        if len(self.labels) != len(self.vectors):
            raise ConfigError(
                f"{len(self.vectors)} vectors but {len(self.labels)} labels")
        if self.subject_ids is not None:
            self.subject_ids = np.asarray(self.subject_ids, dtype=np.int64)
            if len(self.subject_ids) != len(self.vectors):
                raise ConfigError("subject_ids length does not match vectors")

    @property
    def dim(self) -> int:
        return self.vectors.shape[1]

    def __len__(self) -> int:
        return len(self.vectors)


@dataclass
class ClusterModel:
    centers: np.ndarray           # (L, M)
    assignments: np.ndarray       # (N,)
    inertia: float
    L: int
    iteration_inertia: list[float] = field(default_factory=list)

    @property
    def dim(self) -> int:
        return self.centers.shape[1]


def _sq_dists(x: np.ndarray, centers: np.ndarray) -> np.ndarray:
    """(N, L) squared Euclidean distances, computed the stable way."""
    diff = x[:, None, :] - centers[None, :, :]
    return np.einsum("nld,nld->nl", diff, diff)


def nearest_center(centers: np.ndarray, v: np.ndarray) -> tuple[int, float]:
    """(index, squared distance) of the closest center; ties -> lowest index."""
    v = np.asarray(v, dtype=np.float64)
    if v.shape != (centers.shape[1],):
        raise ConfigError(
            f"vector has dimension {v.shape}, centers have {centers.shape[1]}")
    d2 = _sq_dists(v[None, :], centers)[0]
    idx = int(np.argmin(d2))
    return idx, float(d2[idx])


def kmeans_fit(latents: LatentSet, L: int, seed: int, max_iters: int = 300,
               tol: float = 1e-8) -> ClusterModel:
    """k-means++ seeding followed by Lloyd iterations.

    Deterministic per seed.  iteration_inertia records the best-assignment
    objective before every update step plus the final value; it is
    non-increasing by construction and asserted so.
    """
    x = latents.vectors
    n = len(x)
    if L < 1:
        raise ConfigError(f"cluster count must be >= 1, got {L}")
    if n < L:
        raise ConfigError(f"cannot fit {L} clusters on {n} points")

    gen = rng.spawn(seed, "kmeans++")
    centers = np.empty((L, x.shape[1]))
    centers[0] = x[int(gen.integers(n))]
    for i in range(1, L):
        d2 = _sq_dists(x, centers[:i]).min(axis=1)
        total = float(d2.sum())
        if total <= 0.0:
            probs = np.full(n, 1.0 / n)
        else:
            probs = d2 / total
        centers[i] = x[int(gen.choice(n, p=probs))]

    history: list[float] = []
    for _ in range(max_iters):
        d2 = _sq_dists(x, centers)
        assign = d2.argmin(axis=1)
        inertia = float(d2[np.arange(n), assign].sum())
        if history and inertia > history[-1] + 1e-9 * (1.0 + history[-1]):
            raise RuntimeError("Lloyd iteration increased the objective")
        history.append(inertia)

        new_centers = centers.copy()
        for j in range(L):
            members = assign == j
            if members.any():
                new_centers[j] = x[members].mean(axis=0)
        empty = [j for j in range(L) if not (assign == j).any()]
        if empty:
            point_d2 = d2[np.arange(n), assign].copy()
            for j in empty:
                far = int(point_d2.argmax())
                new_centers[j] = x[far]
                point_d2[far] = -1.0  # each empty cluster takes a distinct point

        shift = float(np.sqrt(((new_centers - centers) ** 2).sum(axis=1)).max())
        centers = new_centers
        if shift < tol:
            break

    d2 = _sq_dists(x, centers)
    assign = d2.argmin(axis=1)
    inertia = float(d2[np.arange(n), assign].sum())
    if history and inertia > history[-1] + 1e-9 * (1.0 + history[-1]):
        raise RuntimeError("final assignment increased the objective")
    history.append(inertia)
    return ClusterModel(centers=centers, assignments=assign.astype(np.int64),
                        inertia=inertia, L=L, iteration_inertia=history)


def assign(model: ClusterModel, v: np.ndarray) -> int:
    """Index of the nearest cluster center (ties -> lowest index)."""
    return nearest_center(model.centers, v)[0]


@dataclass
class OccupancyTable:
    counts: np.ndarray       # (L,)
    percentages: np.ndarray  # (L,), sums to 100
    total: int


def occupancy(model: ClusterModel, latents: LatentSet) -> OccupancyTable:
    """Percentage of the latent vectors assigned to each cluster."""
    if len(latents) == 0:
        raise ConfigError("occupancy needs a nonempty latent set")
    if latents.dim != model.dim:
        raise ConfigError(
            f"latents have dimension {latents.dim}, model has {model.dim}")
    d2 = _sq_dists(latents.vectors, model.centers)
    idx = d2.argmin(axis=1)
    counts = np.bincount(idx, minlength=model.L)
    return OccupancyTable(counts=counts,
                          percentages=100.0 * counts / counts.sum(),
                          total=int(counts.sum()))


def format_occupancy(table: OccupancyTable) -> str:
    """Two-column text table: cluster name, percentage of inputs."""
    lines = [f"{'Cluster':<10} {'Data (%)':>9}"]
    for i, pct in enumerate(table.percentages):
        lines.append(f"{'c_' + str(i + 1):<10} {pct:>8.1f}")
    return "\n".join(lines)


def save_latents(path, latents: LatentSet) -> None:
    """Line-delimited records plus a <path>.meta header file.

    Record line: label, then the vector at 17 significant digits, whitespace
    separated; a leading subject-id column is present when the set carries
    subject ids (declared in the header's `columns` line).
    """
    path = Path(path)
    with_sid = latents.subject_ids is not None
    lines = []
    for i in range(len(latents)):
        fields = []
        if with_sid:
            fields.append(str(int(latents.subject_ids[i])))
        fields.append(str(int(latents.labels[i])))
        fields.extend(f"{v:.17g}" for v in latents.vectors[i])
        lines.append(" ".join(fields))
    path.write_text("\n".join(lines) + ("\n" if lines else ""), encoding="utf-8")
    meta = [
        "format latents 1",
        f"count {len(latents)}",
        f"dim {latents.dim}",
        f"columns {'subject label vector' if with_sid else 'label vector'}",
        f"source {latents.source}",
        f"tap {latents.tap}",
    ]
    Path(str(path) + ".meta").write_text("\n".join(meta) + "\n", encoding="utf-8")


def _read_meta(path) -> dict[str, str]:
    meta = {}
    for line in Path(path).read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        key, _, value = line.partition(" ")
        meta[key] = value
    return meta


def load_latents(path) -> LatentSet:
    path = Path(path)
    meta = _read_meta(str(path) + ".meta")
    if meta.get("format") != "latents 1":
        raise FormatError(f"{path}.meta: not a latents header")
    count = int(meta["count"])
    dim = int(meta["dim"])
    with_sid = meta.get("columns", "").startswith("subject")
    rows = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(rows) != count:
        raise FormatError(f"{path}: header says {count} records, found {len(rows)}")
    sids = [] if with_sid else None
    labels = []
    vectors = []
    for i, row in enumerate(rows):
        parts = row.split()
        expected = dim + (2 if with_sid else 1)
        if len(parts) != expected:
            raise FormatError(f"{path}: line {i + 1} has {len(parts)} fields, expected {expected}")
        j = 0
        if with_sid:
            sids.append(int(parts[0]))
            j = 1
        labels.append(int(parts[j]))
        vectors.append([float(v) for v in parts[j + 1:]])
    return LatentSet(vectors=np.array(vectors).reshape(count, dim),
                     labels=np.array(labels, dtype=np.int64),
                     source=meta.get("source", ""), tap=meta.get("tap", ""),
                     subject_ids=np.array(sids, dtype=np.int64) if with_sid else None)


def save_cluster_model(path, model: ClusterModel) -> None:
    """Centers one per line (17 significant digits) plus a .meta header."""
    path = Path(path)
    lines = [" ".join(f"{v:.17g}" for v in row) for row in model.centers]
    path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    meta = [
        "format cluster-model 1",
        f"L {model.L}",
        f"dim {model.dim}",
        f"inertia {model.inertia:.17g}",
        "assignments " + " ".join(str(int(a)) for a in model.assignments),
    ]
    Path(str(path) + ".meta").write_text("\n".join(meta) + "\n", encoding="utf-8")


def load_cluster_model(path) -> ClusterModel:
    path = Path(path)
    meta = _read_meta(str(path) + ".meta")
    if meta.get("format") != "cluster-model 1":
        raise FormatError(f"{path}.meta: not a cluster-model header")
    L = int(meta["L"])
    dim = int(meta["dim"])
    rows = [ln for ln in path.read_text(encoding="utf-8").splitlines() if ln.strip()]
    if len(rows) != L:
        raise FormatError(f"{path}: header says {L} centers, found {len(rows)}")
    centers = np.array([[float(v) for v in row.split()] for row in rows])
    if centers.shape != (L, dim):
        raise FormatError(f"{path}: centers shape {centers.shape}, expected {(L, dim)}")
    assignments = np.array([int(a) for a in meta.get("assignments", "").split()],
                           dtype=np.int64)
    return ClusterModel(centers=centers, assignments=assignments,
                        inertia=float(meta["inertia"]), L=L)
