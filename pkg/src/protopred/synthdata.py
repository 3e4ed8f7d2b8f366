"""Deterministic synthetic dual-modality datasets.

Each subject contributes samples with two modalities: a high-SNR "scan"
image (one or three channels) and a low-SNR "volume" of three slices that
carry the same spatial signal.  Controls show two bright, symmetric
comma-shaped blobs; patients show asymmetric, attenuated blobs whose
attenuation grows with a per-subject severity drawn from a small mixture of
modes.  Controls come in two geometric variants (narrow / wide blob
spacing) so their latents also carry substructure.

A fifth of all samples have no scan (the image is all zeros): not every
visit acquires one.  Those cases are only solvable through the volume,
which is what makes the dual-modality network strictly more informed than
a scan-only one and motivates volume-only deployments.

Every sample is generated from a stream keyed by (seed, subject, sample
index), so parallel generation equals serial generation exactly.
"""

from __future__ import annotations

import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from . import rng
from .binio import Reader, Writer
from .errors import ConfigError, FormatError

MAGIC = b"PPDS"
VERSION = 1

STYLES = ("color-scan", "gray-scan")
VIEWS = ("dual", "scan", "volume")

_COLOR_WEIGHTS = (1.0, 0.62, 0.25)
_SLICE_PROFILE = (0.75, 1.0, 0.75)
SCAN_MISSING_RATE = 0.15
VOLUME_RANGE = 0.35   # the volume modality lives in its own, smaller unit range


@dataclass
class Sample:
    subject_id: int
    scan: np.ndarray      # (H, W, C)
    volume: np.ndarray    # (3, H, W)
    label: int            # 0 control, 1 patient
    severity: float       # in [0,1]; 0 for controls


@dataclass
class Dataset:
    samples: list[Sample]
    name: str = ""
    split_tag: str = ""

    def __len__(self) -> int:
        return len(self.samples)

    def subject_ids(self) -> list[int]:
        seen: dict[int, None] = {}
        for s in self.samples:
            seen.setdefault(s.subject_id, None)
        return list(seen)

    def label_counts(self) -> dict[int, int]:
        counts = {0: 0, 1: 0}
        for s in self.samples:
            counts[s.label] += 1
        return counts


@dataclass
class GeneratorConfig:
    n_subjects: int = 48
    samples_per_subject: int = 4
    image_size: int = 32
    scan_snr: float = 6.0
    volume_snr: float = 1.5
    class_balance: float = 0.65   # fraction of patient subjects
    severity_modes: int = 3
    seed: int = 0
    style: str = "color-scan"

    def __post_init__(self) -> None:
        if self.n_subjects < 0:
            raise ConfigError(f"n_subjects must be >= 0, got {self.n_subjects}")
        if self.samples_per_subject < 1:
            raise ConfigError("samples_per_subject must be >= 1")
        if self.image_size < 8:
            raise ConfigError(f"image_size must be >= 8, got {self.image_size}")
        if not self.scan_snr > 0 or not self.volume_snr > 0:
            raise ConfigError("SNR values must be positive")
        if not self.scan_snr > self.volume_snr:
            raise ConfigError(
                f"scan_snr ({self.scan_snr}) must exceed volume_snr ({self.volume_snr})")
        if not 0.0 < self.class_balance < 1.0:
            raise ConfigError(f"class_balance must be in (0,1), got {self.class_balance}")
        if self.severity_modes < 1:
            raise ConfigError("severity_modes must be >= 1")
        if self.style not in STYLES:
            raise ConfigError(f"style must be one of {STYLES}, got {self.style!r}")

    @property
    def scan_channels(self) -> int:
        return 3 if self.style == "color-scan" else 1


def _comma(xx: np.ndarray, yy: np.ndarray, side: int, amp: float, tail: float,
           width: float, shift: tuple[float, float], spread: float = 0.40) -> np.ndarray:
    """One comma-shaped blob: a bump chain tapering down-inward."""
    img = np.zeros_like(xx)
    k = 7
    for i in range(k):
        t = i / (k - 1)
        if t > tail:
            break
        px = side * (spread - 0.16 * t + 0.05 * math.sin(math.pi * t)) + shift[0]
        py = 0.32 - 0.85 * t + shift[1]
        sigma = width * (1.0 - 0.45 * t)
        inten = amp * (1.0 - 0.35 * t)
        img += inten * np.exp(-((xx - px) ** 2 + (yy - py) ** 2) / (2.0 * sigma * sigma))
    return img


def _pattern(size: int, label: int, severity: float, variant: int, affected: int,
             shift: tuple[float, float]) -> np.ndarray:
    """Noise-free signal pattern, peak-normalized on the clear-control template.

    Patients lose uptake on both sides with severity, the affected side
    faster, and their tails shorten (the comma degenerates toward a dot).
    Both control variants stay brighter than even the mildest patients so
    class membership is carried by overall attenuation, not only asymmetry.
    """
    lin = np.linspace(-1.0, 1.0, size)
    xx, yy = np.meshgrid(lin, lin, indexing="xy")
    if label == 0:
        # Control substructure is geometric (blob spacing), orthogonal to
        # intensity, so overall uptake stays a clean class separator.
        spread = 0.40 if variant == 0 else 0.52
        img = (_comma(xx, yy, -1, 1.0, 1.0, 0.15, shift, spread)
               + _comma(xx, yy, +1, 1.0, 1.0, 0.15, shift, spread))
    else:
        img = np.zeros_like(xx)
        for side in (-1, +1):
            hit = side == affected
            amp = (0.82 - 0.50 * severity) if hit else (0.92 - 0.35 * severity)
            tail = 1.0 - (0.55 if hit else 0.25) * severity
            img += _comma(xx, yy, side, amp, tail, 0.15, shift)
    # The clear-control template peaks around 1.18 with this bump chain;
    # dividing by it puts control peaks at 1.0 and patients below.
    return img / 1.18


def _subject_profile(cfg: GeneratorConfig, sid: int, label: int) -> dict:
    gen = rng.spawn(cfg.seed, "subject", sid)
    mode = int(gen.integers(cfg.severity_modes))
    jitter = gen.normal(0.0, 0.035)
    variant = int(gen.integers(2))
    affected = -1 if gen.random() < 0.5 else 1
    shift = (gen.uniform(-0.03, 0.03), gen.uniform(-0.03, 0.03))
    if label == 1:
        center = (mode + 1.0) / (cfg.severity_modes + 1.0)
        severity = float(np.clip(center + jitter, 0.05, 0.98))
    else:
        severity = 0.0
    return {"severity": severity, "variant": variant, "affected": affected,
            "shift": shift}


def _render_sample(cfg: GeneratorConfig, sid: int, idx: int, label: int,
                   prof: dict) -> Sample:
    gen = rng.spawn(cfg.seed, "sample", sid, idx)
    shift = (prof["shift"][0] + gen.uniform(-0.012, 0.012),
             prof["shift"][1] + gen.uniform(-0.012, 0.012))
    size = cfg.image_size
    pattern = _pattern(size, label, prof["severity"], prof["variant"],
                       prof["affected"], shift)
    sigma_scan = 1.0 / cfg.scan_snr
    sigma_vol = 1.0 / cfg.volume_snr
    channels = cfg.scan_channels
    scan_missing = rng.spawn(cfg.seed, "scanmiss", sid, idx).random() < SCAN_MISSING_RATE
    if scan_missing:
        scan = np.zeros((size, size, channels))
    else:
        scan = np.empty((size, size, channels))
        for c in range(channels):
            weight = _COLOR_WEIGHTS[c] if channels == 3 else 1.0
            scan[:, :, c] = weight * pattern + gen.normal(0.0, sigma_scan, (size, size))
    volume = np.empty((3, size, size))
    for z in range(3):
        volume[z] = VOLUME_RANGE * (_SLICE_PROFILE[z] * pattern
                                    + gen.normal(0.0, sigma_vol, (size, size)))
    return Sample(subject_id=sid, scan=scan, volume=volume, label=label,
                  severity=prof["severity"])


def generate(cfg: GeneratorConfig, name: str | None = None) -> Dataset:
    """Generate a dataset; identical configs give byte-identical datasets."""
    name = name if name is not None else f"synth-{cfg.seed}"
    n = cfg.n_subjects
    if n == 0:
        return Dataset(samples=[], name=name)
    n_pat = int(round(n * cfg.class_balance))
    if n >= 2:
        n_pat = min(max(n_pat, 1), n - 1)  # keep both classes present
    perm = rng.spawn(cfg.seed, "labels").permutation(n)
    patients = set(int(s) for s in perm[:n_pat])
    samples = []
    for sid in range(n):
        label = 1 if sid in patients else 0
        prof = _subject_profile(cfg, sid, label)
        for idx in range(cfg.samples_per_subject):
            samples.append(_render_sample(cfg, sid, idx, label, prof))
    return Dataset(samples=samples, name=name)


def split(ds: Dataset, fractions: tuple[float, float, float],
          seed: int) -> tuple[Dataset, Dataset, Dataset]:
    """Subject-independent split into (train, valid, test).

    Fractions must be positive and sum to 1 (+-1e-9); subject counts honor
    them within one subject and every split gets at least one subject.  No
    subject appears in two outputs.
    """
    fr = tuple(float(f) for f in fractions)
    if len(fr) != 3 or any(f <= 0 for f in fr):
        raise ConfigError(f"fractions must be three positive numbers, got {fractions}")
    if abs(sum(fr) - 1.0) > 1e-9:
        raise ConfigError(f"fractions must sum to 1, got sum {sum(fr)!r}")
    subjects = sorted(ds.subject_ids())
    n = len(subjects)
    if n < 3:
        raise ConfigError(f"need at least 3 subjects to split, got {n}")
    order = [subjects[i] for i in rng.spawn(seed, "split").permutation(n)]

    counts = [int(math.floor(f * n)) for f in fr]
    remainders = [f * n - c for f, c in zip(fr, counts)]
    for _ in range(n - sum(counts)):
        best = max(range(3), key=lambda i: (remainders[i], -i))
        counts[best] += 1
        remainders[best] = -1.0
    while min(counts) == 0:
        counts[counts.index(max(counts))] -= 1
        counts[counts.index(min(counts))] += 1

    tags = ("train", "valid", "test")
    outs = []
    pos = 0
    for count, tag in zip(counts, tags):
        chosen = set(order[pos:pos + count])
        pos += count
        outs.append(Dataset(samples=[s for s in ds.samples if s.subject_id in chosen],
                            name=ds.name, split_tag=tag))
    return outs[0], outs[1], outs[2]


def augment_balance(ds: Dataset, noise_sigma: float, seed: int) -> Dataset:
    """Equalize class counts by duplicating minority samples with pixel noise.

    Duplicates cycle through the minority samples in dataset order; each
    clone gets i.i.d. zero-mean Gaussian noise (sigma = noise_sigma) on both
    modalities and keeps its source subject_id and severity.  An already
    balanced dataset is returned unchanged.
    """
    if not ds.samples:
        raise ConfigError("cannot balance an empty dataset")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be >= 0")
    counts = ds.label_counts()
    if counts[0] == 0 or counts[1] == 0:
        raise ConfigError("single-class dataset: nothing to balance toward")
    if counts[0] == counts[1]:
        return ds
    minority = 0 if counts[0] < counts[1] else 1
    pool = [s for s in ds.samples if s.label == minority]
    need = abs(counts[0] - counts[1])
    clones = []
    for k in range(need):
        src = pool[k % len(pool)]
        gen = rng.spawn(seed, "augment", k)
        clones.append(Sample(
            subject_id=src.subject_id,
            scan=src.scan + gen.normal(0.0, noise_sigma, src.scan.shape),
            volume=src.volume + gen.normal(0.0, noise_sigma, src.volume.shape),
            label=src.label,
            severity=src.severity,
        ))
    return Dataset(samples=list(ds.samples) + clones, name=ds.name,
                   split_tag=ds.split_tag)


def as_inputs(ds: Dataset, view: str) -> list[tuple[np.ndarray, float]]:
    """Convert samples to (tensor, target) pairs for one modality view.

    dual   -> (H, W, C+2): scan channels, the slice-averaged volume at half
              gain (the slices carry the same signal, so the average keeps
              it while dropping two thirds of the noise; the half gain puts
              its residual noise on the scan's numeric scale), and a
              missing-scan marker plane (0 when the scan was acquired, 0.3
              when it was not).  The marker keeps "scan not acquired"
              distinct from "severely attenuated uptake": without it the
              all-zero scan of a missing acquisition reads as the dimmest
              possible uptake, i.e. maximally patient-like.
    scan   -> (H, W, C)
    volume -> (3, H, W, 1): slice sequence for the recurrent architecture
    """
    if view not in VIEWS:
        raise ConfigError(f"view must be one of {VIEWS}, got {view!r}")
    pairs = []
    for s in ds.samples:
        if view == "scan":
            x = s.scan
        elif view == "volume":
            x = s.volume[..., None]
        else:
            # Real scans always exceed this threshold through noise alone;
            # balancing clones of missing scans stay far below it.
            missing = np.max(np.abs(s.scan)) <= 0.05
            plane = np.full(s.scan.shape[:2] + (1,), 0.3 if missing else 0.0)
            x = np.concatenate([s.scan, 0.5 * s.volume.mean(axis=0)[:, :, None], plane],
                               axis=2)
        pairs.append((np.ascontiguousarray(x, dtype=np.float64), float(s.label)))
    return pairs


def view_input_shape(size: int, channels: int, view: str) -> tuple[int, ...]:
    """Per-sample input shape of a modality view."""
    if view == "dual":
        return (size, size, channels + 2)
    if view == "scan":
        return (size, size, channels)
    if view == "volume":
        return (3, size, size, 1)
    raise ConfigError(f"view must be one of {VIEWS}, got {view!r}")


def save(ds: Dataset, path) -> None:
    w = Writer()
    w.raw(MAGIC)
    w.u32(VERSION)
    w.string(ds.name)
    w.string(ds.split_tag)
    w.u64(len(ds.samples))
    for s in ds.samples:
        w.u64(s.subject_id)
        w.u8(s.label)
        w.f64(s.severity)
        for arr in (s.scan, s.volume):
            w.u32(arr.ndim)
            for d in arr.shape:
                w.u32(d)
            w.f64_array(arr)
    Path(path).write_bytes(w.getvalue())


def _read_tensor(r: Reader, what: str) -> np.ndarray:
    rank = r.u32(f"{what} rank")
    if rank > 8:
        raise FormatError(f"implausible {what} rank {rank} at offset {r.offset - 4}")
    shape = tuple(r.u32(f"{what} dim") for _ in range(rank))
    return r.f64_array(int(np.prod(shape)) if shape else 1, what).reshape(shape)


def load(path) -> Dataset:
    data = Path(path).read_bytes()
    r = Reader(data, str(path))
    r.expect_magic(MAGIC)
    version = r.u32("version")
    if version != VERSION:
        raise FormatError(f"{path}: unsupported dataset format version {version}")
    name = r.string("name")
    split_tag = r.string("split tag")
    count = r.u64("sample count")
    samples = []
    for i in range(count):
        sid = r.u64("subject id")
        label = r.u8("label")
        if label not in (0, 1):
            raise FormatError(f"{path}: bad label {label} at offset {r.offset - 1}")
        severity = r.f64("severity")
        scan = _read_tensor(r, "scan")
        volume = _read_tensor(r, "volume")
        if scan.ndim != 3 or volume.ndim != 3 or volume.shape[0] != 3:
            raise FormatError(
                f"{path}: sample {i} has scan shape {scan.shape} / volume shape "
                f"{volume.shape} (expected (H,W,C) and (3,H,W))")
        if not (np.all(np.isfinite(scan)) and np.all(np.isfinite(volume))):
            raise FormatError(f"{path}: sample {i} contains non-finite values")
        samples.append(Sample(subject_id=sid, scan=scan, volume=volume,
                              label=label, severity=severity))
    r.done()
    return Dataset(samples=samples, name=name, split_tag=split_tag)
