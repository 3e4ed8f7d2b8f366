"""Annotated prototype sets: nearest-center classification, PCA dimension
reconciliation, merging across datasets, and novelty flagging.

A prototype is a labeled, annotated cluster center.  A PrototypeSet is the
deployable model: classifying a vector means finding its nearest prototype
(same tie rule as clustering.assign) and adopting that prototype's label.
Sets from networks with different latent widths are merged by projecting
the wider one down with a PCA map fitted on the wider network's latents.
"""

from __future__ import annotations

import json
import warnings
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

from .clustering import ClusterModel, LatentSet, _sq_dists, nearest_center
from .errors import ConfigError, FormatError


@dataclass
class Prototype:
    center: np.ndarray
    label: int
    annotation: str = ""
    source: str = ""
    support: float = 0.0   # fraction of training latents assigned

    def __post_init__(self) -> None:
        self.center = np.asarray(self.center, dtype=np.float64)
        if not 0.0 <= self.support <= 1.0:
            raise ConfigError(f"support must be in [0,1], got {self.support}")


@dataclass
class PrototypeSet:
    prototypes: list[Prototype]
    dim: int
    provenance: list[tuple[str, str]] = field(default_factory=list)

    def __post_init__(self) -> None:
        for p in self.prototypes:
            if p.center.shape != (self.dim,):
                raise ConfigError(
                    f"prototype center has shape {p.center.shape}, set dim is {self.dim}")
        labels = {p.label for p in self.prototypes}
        if self.prototypes and labels != {0, 1}:
            warnings.warn(
                f"prototype set covers labels {sorted(labels)}; a usable classifier "
                "needs at least one prototype per label", stacklevel=2)

    def __len__(self) -> int:
        return len(self.prototypes)

    def centers(self) -> np.ndarray:
        if not self.prototypes:
            return np.zeros((0, self.dim))
        return np.stack([p.center for p in self.prototypes])

    def labels(self) -> np.ndarray:
        return np.array([p.label for p in self.prototypes], dtype=np.int64)


@dataclass
class PcaMap:
    mean: np.ndarray              # (M,)
    components: np.ndarray        # (k, M), orthonormal rows
    k: int
    explained_variance: np.ndarray  # (k,)

    @property
    def in_dim(self) -> int:
        return self.mean.shape[0]


def build_prototypes(model: ClusterModel, latents: LatentSet,
                     annotations: list[str] | None = None) -> PrototypeSet:
    """One prototype per cluster: majority label, assigned fraction as support.

    Label ties go to 1 (the patient class).  A cluster with no assigned
    latents cannot be labeled and raises.
    """
    if latents.dim != model.dim:
        raise ConfigError(
            f"latents have dimension {latents.dim}, model has {model.dim}")
    if annotations is not None and len(annotations) != model.L:
        raise ConfigError(
            f"{len(annotations)} annotations for {model.L} clusters")
    d2 = _sq_dists(latents.vectors, model.centers)
    idx = d2.argmin(axis=1)
    empty = [j for j in range(model.L) if not (idx == j).any()]
    if empty:
        raise ConfigError(
            "cannot label clusters with no assigned latents: "
            + ", ".join(str(j) for j in empty))
    protos = []
    n = len(latents)
    for j in range(model.L):
        members = idx == j
        ones = int(latents.labels[members].sum())
        zeros = int(members.sum()) - ones
        label = 1 if ones >= zeros else 0
        protos.append(Prototype(
            center=model.centers[j].copy(),
            label=label,
            annotation=annotations[j] if annotations else "",
            source=latents.source,
            support=members.sum() / n,
        ))
    return PrototypeSet(prototypes=protos, dim=model.dim,
                        provenance=[(latents.tap, latents.source)])


def classify(pset: PrototypeSet, v: np.ndarray) -> tuple[int, int, float]:
    """(label, prototype index, Euclidean distance) of the nearest prototype."""
    if not pset.prototypes:
        raise ConfigError("cannot classify with an empty prototype set")
    idx, d2 = nearest_center(pset.centers(), v)
    return pset.prototypes[idx].label, idx, float(np.sqrt(d2))


def classify_batch(pset: PrototypeSet, vectors: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """(labels, prototype indices) for a matrix of vectors."""
    if not pset.prototypes:
        raise ConfigError("cannot classify with an empty prototype set")
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[1] != pset.dim:
        raise ConfigError(
            f"vectors have dimension {vectors.shape[1]}, set dim is {pset.dim}")
    idx = _sq_dists(vectors, pset.centers()).argmin(axis=1)
    return pset.labels()[idx], idx


def accuracy(pset: PrototypeSet, latents: LatentSet) -> float:
    """Fraction of latents whose nearest prototype carries their label."""
    labels, _ = classify_batch(pset, latents.vectors)
    return float(np.mean(labels == latents.labels))


@dataclass
class SubjectRow:
    subject: int
    label: int
    counts: np.ndarray   # per-prototype sample counts
    top: int             # index of the max-count prototype
    accuracy: float      # fraction of samples in prototypes of the right label


@dataclass
class ClassifyReport:
    rows: list[SubjectRow]
    prototype_labels: np.ndarray
    total_accuracy: float
    per_class_accuracy: dict[int, float]


def classify_report(pset: PrototypeSet, latents: LatentSet,
                    group_by_subject=None) -> ClassifyReport:
    """Per-subject table of prototype assignment counts plus accuracies.

    group_by_subject: sequence of subject ids aligned with the latent rows;
    defaults to latents.subject_ids, and to a single group when neither is
    available.  A subject's accuracy is the fraction of its samples whose
    assigned prototype carries the subject's label.
    """
    sids = group_by_subject if group_by_subject is not None else latents.subject_ids
    if sids is None:
        sids = np.zeros(len(latents), dtype=np.int64)
    sids = np.asarray(sids)
    if len(sids) != len(latents):
        raise ConfigError("group_by_subject length does not match latents")
    labels, idx = classify_batch(pset, latents.vectors)
    hits = labels == latents.labels
    rows = []
    for sid in dict.fromkeys(sids.tolist()):
        mask = sids == sid
        counts = np.bincount(idx[mask], minlength=len(pset))
        subject_labels = set(latents.labels[mask].tolist())
        if len(subject_labels) != 1:
            raise ConfigError(f"subject {sid} has mixed labels {sorted(subject_labels)}")
        rows.append(SubjectRow(
            subject=int(sid),
            label=subject_labels.pop(),
            counts=counts,
            top=int(counts.argmax()),
            accuracy=float(np.mean(hits[mask])),
        ))
    per_class = {}
    for cls in (0, 1):
        mask = latents.labels == cls
        if mask.any():
            per_class[cls] = float(np.mean(hits[mask]))
    return ClassifyReport(rows=rows, prototype_labels=pset.labels(),
                          total_accuracy=float(np.mean(hits)),
                          per_class_accuracy=per_class)


def format_report(report: ClassifyReport) -> str:
    """Text table: one row per subject, counts per prototype (max bracketed),
    and the subject's nearest-prototype accuracy."""
    ncl = len(report.prototype_labels)
    header = (f"{'Test case':<16} "
              + " ".join(f"{'c_' + str(i + 1):>7}" for i in range(ncl))
              + f" {'PD/NPD':>8}")
    lines = [header]
    for row in report.rows:
        kind = "Patient" if row.label == 1 else "Non Patient"
        cells = []
        for i, c in enumerate(row.counts):
            mark = f"[{c}]" if i == row.top else f"{c}"
            cells.append(f"{mark:>7}")
        lines.append(f"{kind + ' ' + str(row.subject):<16} "
                     + " ".join(cells) + f" {100.0 * row.accuracy:>7.1f}%")
    lines.append(f"{'Total':<16} " + " " * (8 * ncl)
                 + f"{100.0 * report.total_accuracy:>7.1f}%")
    return "\n".join(lines)


def pca_fit(latents: LatentSet, k: int) -> PcaMap:
    """Top-k principal directions of the latent covariance.

    Deterministic sign convention: the first nonzero entry of every
    component is positive.  Raises when the covariance rank cannot support
    k components, reporting the achievable rank.
    """
    x = latents.vectors
    n, m = x.shape
    if k < 1 or k > m:
        raise ConfigError(f"k must be in [1, {m}], got {k}")
    if n < k:
        raise ConfigError(f"need at least k={k} latents, got {n}")
    mean = x.mean(axis=0)
    xc = x - mean
    cov = (xc.T @ xc) / max(n - 1, 1)
    eigvals, eigvecs = np.linalg.eigh(cov)
    order = np.argsort(eigvals)[::-1]
    eigvals = eigvals[order]
    eigvecs = eigvecs[:, order]
    rank = int(np.sum(eigvals > max(eigvals[0], 0.0) * 1e-12 + 1e-300))
    if rank < k:
        raise ConfigError(
            f"covariance rank {rank} cannot support {k} components")
    comps = eigvecs[:, :k].T.copy()
    for row in comps:
        nz = np.nonzero(np.abs(row) > 1e-12)[0]
        if len(nz) and row[nz[0]] < 0:
            row *= -1.0
    return PcaMap(mean=mean, components=comps, k=k,
                  explained_variance=eigvals[:k].copy())


def pca_transform(pmap: PcaMap, vectors: np.ndarray) -> np.ndarray:
    """Project row vectors: (v - mean) @ components^T."""
    vectors = np.asarray(vectors, dtype=np.float64)
    if vectors.shape[-1] != pmap.in_dim:
        raise ConfigError(
            f"vectors have dimension {vectors.shape[-1]}, map expects {pmap.in_dim}")
    return (vectors - pmap.mean) @ pmap.components.T


def pca_project_latents(pmap: PcaMap, latents: LatentSet) -> LatentSet:
    return LatentSet(vectors=pca_transform(pmap, latents.vectors),
                     labels=latents.labels.copy(), source=latents.source,
                     tap=latents.tap,
                     subject_ids=None if latents.subject_ids is None
                     else latents.subject_ids.copy())


def pca_project(pmap: PcaMap, pset: PrototypeSet) -> PrototypeSet:
    """Project every prototype center into the k-dimensional PCA space."""
    if pset.dim != pmap.in_dim:
        raise ConfigError(
            f"prototype set has dim {pset.dim}, map expects {pmap.in_dim}")
    projected = [replace(p, center=pca_transform(pmap, p.center[None])[0])
                 for p in pset.prototypes]
    return PrototypeSet(prototypes=projected, dim=pmap.k,
                        provenance=list(pset.provenance))


def merge(a: PrototypeSet, b: PrototypeSet,
          reconcile: PcaMap | None = None) -> PrototypeSet:
    """Union of two prototype sets, reconciling dimensions when they differ.

    With unequal dims a PcaMap fitted on the wider network's latents must be
    supplied; the wider set is projected down and the union lives at the
    lower dimension.  No re-clustering happens.
    """
    if not a.prototypes:
        return PrototypeSet(prototypes=list(b.prototypes), dim=b.dim,
                            provenance=list(a.provenance) + list(b.provenance))
    if not b.prototypes:
        return PrototypeSet(prototypes=list(a.prototypes), dim=a.dim,
                            provenance=list(a.provenance) + list(b.provenance))
    if a.dim != b.dim:
        if reconcile is None:
            raise ConfigError(
                f"dimension mismatch ({a.dim} vs {b.dim}) and no reconcile map")
        high, low = (a, b) if a.dim > b.dim else (b, a)
        if reconcile.in_dim != high.dim or reconcile.k != low.dim:
            raise ConfigError(
                f"reconcile map {reconcile.in_dim}->{reconcile.k} cannot bring "
                f"{high.dim} onto {low.dim}")
        high = pca_project(reconcile, high)
        a, b = (high, low) if a.dim > b.dim else (low, high)
    return PrototypeSet(prototypes=list(a.prototypes) + list(b.prototypes),
                        dim=a.dim,
                        provenance=list(a.provenance) + list(b.provenance))


def novelty_check(pset: PrototypeSet, v: np.ndarray, threshold: float) -> str:
    """"novel" when the nearest prototype is farther than threshold."""
    if not threshold > 0:
        raise ConfigError(f"threshold must be positive, got {threshold}")
    _, _, dist = classify(pset, v)
    return "novel" if dist > threshold else "known"


def novelty_threshold(pset: PrototypeSet, latents: LatentSet,
                      percentile: float = 95.0) -> float:
    """Distance percentile of the training latents' nearest-prototype gaps."""
    d2 = _sq_dists(latents.vectors, pset.centers()).min(axis=1)
    return float(np.percentile(np.sqrt(d2), percentile))


def save_prototype_set(path, pset: PrototypeSet) -> None:
    """Human-readable deployable model file.

    '#' header lines carry the format tag, dim, and provenance; then one
    prototype per line: label, source (JSON string), support, annotation
    (JSON string), and the center at 17 significant digits, tab separated.
    """
    lines = ["# prototype-set v1", f"# dim: {pset.dim}"]
    for tap, source in pset.provenance:
        lines.append(f"# provenance: {json.dumps([tap, source])}")
    for p in pset.prototypes:
        fields = [str(p.label), json.dumps(p.source), f"{p.support:.17g}",
                  json.dumps(p.annotation)]
        fields.extend(f"{v:.17g}" for v in p.center)
        lines.append("\t".join(fields))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def load_prototype_set(path) -> PrototypeSet:
    text = Path(path).read_text(encoding="utf-8")
    lines = [ln for ln in text.splitlines() if ln.strip()]
    if not lines or lines[0] != "# prototype-set v1":
        raise FormatError(f"{path}: missing prototype-set header")
    dim = None
    provenance = []
    protos = []
    for i, line in enumerate(lines[1:], start=2):
        if line.startswith("#"):
            body = line[1:].strip()
            if body.startswith("dim:"):
                dim = int(body[4:].strip())
            elif body.startswith("provenance:"):
                tap, source = json.loads(body[len("provenance:"):].strip())
                provenance.append((tap, source))
            continue
        if dim is None:
            raise FormatError(f"{path}: prototype record before the dim header")
        parts = line.split("\t")
        if len(parts) != 4 + dim:
            raise FormatError(
                f"{path}: line {i} has {len(parts)} fields, expected {4 + dim}")
        label = int(parts[0])
        if label not in (0, 1):
            raise FormatError(f"{path}: line {i} has bad label {label}")
        protos.append(Prototype(
            center=np.array([float(v) for v in parts[4:]]),
            label=label,
            source=json.loads(parts[1]),
            support=float(parts[2]),
            annotation=json.loads(parts[3]),
        ))
    if dim is None:
        raise FormatError(f"{path}: missing dim header")
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return PrototypeSet(prototypes=protos, dim=dim, provenance=provenance)
