"""Skeleton sequences: CSV I/O, preprocessing, joint co-occurrence and synthetic data.

Sequence CSV format::

    fps=<float>,joints=<J>
    x_1,y_1,z_1,x_2,y_2,z_2,...,x_J,y_J,z_J      # one line per frame

Floats are written with 17 significant digits so that a save/load round
trip is bit-exact. A manifest is a JSON-lines file with one
``{"path", "label", "class", "fold"}`` record per sequence; ``path`` is
relative to the manifest's directory and ``label`` is a 0-based class index.

Preprocessing order is fixed: downsample -> smooth -> centralize.
"""

from __future__ import annotations

import json
import math
import warnings
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

__all__ = [
    "SkeletonSequence",
    "PreprocessConfig",
    "ManifestEntry",
    "DatasetManifest",
    "SynthSpec",
    "SMOOTHING_KERNEL",
    "load_sequence",
    "save_sequence",
    "downsample",
    "smooth",
    "centralize",
    "preprocess",
    "joint_covariance",
    "synth_generate",
    "read_manifest",
    "write_manifest",
]

# integer taps; the filter divides by their sum, 35
SMOOTHING_KERNEL = (-3, 12, 17, 12, -3)


class FormatError(ValueError):
    pass


@dataclass
class SkeletonSequence:
    frames: np.ndarray  # (T, 3J)
    fps: float
    center_joint: Optional[int] = None

    def __post_init__(self):
        self.frames = np.asarray(self.frames, dtype=np.float64)
        if self.frames.ndim != 2 or self.frames.shape[1] % 3 != 0 or self.frames.shape[1] == 0:
            raise ValueError(f"frames must have shape (T, 3J), got {self.frames.shape}")
        if not self.fps > 0:
            raise ValueError("fps must be positive")
        if not np.all(np.isfinite(self.frames)):
            raise ValueError("frames contain non-finite values")

    @property
    def joints(self) -> int:
        return self.frames.shape[1] // 3

    @property
    def T(self) -> int:
        return self.frames.shape[0]

    def positions(self) -> np.ndarray:
        """Frames reshaped to ``(T, J, 3)``."""
        return self.frames.reshape(self.T, self.joints, 3)


def load_sequence(path) -> SkeletonSequence:
    path = Path(path)
    with path.open("r", encoding="utf-8") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError(f"{path}:1: missing header 'fps=<v>,joints=<J>'")
    header = {}
    try:
        for part in lines[0].split(","):
            key, value = part.split("=", 1)
            header[key.strip()] = value.strip()
        fps = float(header["fps"])
        J = int(header["joints"])
    except (KeyError, ValueError):
        raise FormatError(f"{path}:1: malformed header {lines[0]!r}; expected 'fps=<v>,joints=<J>'") from None
    rows = []
    for lineno, line in enumerate(lines[1:], start=2):
        if not line.strip():
            continue
        fields_ = line.split(",")
        if len(fields_) != 3 * J:
            raise FormatError(f"{path}:{lineno}: expected {3 * J} values, found {len(fields_)}")
        try:
            rows.append([float(v) for v in fields_])
        except ValueError:
            raise FormatError(f"{path}:{lineno}: non-numeric field") from None
    if not rows:
        raise FormatError(f"{path}: no frames")
    return SkeletonSequence(np.array(rows), fps)


def save_sequence(seq: SkeletonSequence, path) -> None:
    if seq.T == 0:
        raise ValueError("refusing to save a sequence with no frames")
    fps = repr(float(seq.fps))
    lines = [f"fps={fps},joints={seq.joints}"]
    lines.extend(",".join(format(v, ".17g") for v in row) for row in seq.frames)
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def downsample(seq: SkeletonSequence, target_fps: float) -> SkeletonSequence:
    """Keep every k-th frame from the first one, ``k = round(fps / target_fps)``.

    When ``fps`` is not an integer multiple of ``target_fps`` the nearest
    integer factor is used and the resulting rate is ``fps / k``.
    """
    if target_fps > seq.fps:
        raise ValueError(f"target rate {target_fps} exceeds source rate {seq.fps}")
    k = max(1, int(round(seq.fps / target_fps)))
    return SkeletonSequence(seq.frames[::k].copy(), seq.fps / k, seq.center_joint)


def smooth(seq: SkeletonSequence) -> SkeletonSequence:
    """Temporal 5-tap filter ``(-3, 12, 17, 12, -3) / 35`` on every channel.

    The sequence is mirrored at both ends (reflect padding). The weighted sum
    is accumulated in extended precision before dividing by 35, so constant
    channels come back unchanged.
    """
    x = seq.frames.astype(np.longdouble)
    T = x.shape[0]
    if T == 1:
        padded = np.repeat(x, 5, axis=0)
    else:
        padded = np.pad(x, ((2, 2), (0, 0)), mode="reflect")
    acc = np.zeros_like(x)
    for offset, tap in enumerate(SMOOTHING_KERNEL):
        acc += np.longdouble(tap) * padded[offset:offset + T]
    out = (acc / np.longdouble(sum(SMOOTHING_KERNEL))).astype(np.float64)
    return SkeletonSequence(out, seq.fps, seq.center_joint)


@dataclass
class PreprocessConfig:
    target_fps: Optional[float] = 30.0
    smooth: bool = True
    centralize: bool = True
    center_joint: Optional[int] = None  # None: per-frame centroid of all joints

    @classmethod
    def from_dict(cls, d: dict) -> "PreprocessConfig":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown preprocess config keys: {sorted(unknown)}")
        return cls(**d)


def centralize(seq: SkeletonSequence, center_joint: Optional[int] = None) -> SkeletonSequence:
    """Subtract a per-frame center from every joint.

    The center is ``center_joint`` if given, else the sequence's own
    ``center_joint``, else the centroid of all joints.
    """
    if isinstance(center_joint, PreprocessConfig):
        center_joint = center_joint.center_joint
    if center_joint is None:
        center_joint = seq.center_joint
    pos = seq.positions()
    if center_joint is None:
        center = pos.mean(axis=1, keepdims=True)
    else:
        if not 0 <= center_joint < seq.joints:
            raise IndexError(f"center joint {center_joint} outside 0..{seq.joints - 1}")
        center = pos[:, center_joint:center_joint + 1, :]
    out = (pos - center).reshape(seq.T, -1)
    return SkeletonSequence(out, seq.fps, seq.center_joint)


def preprocess(seq: SkeletonSequence, cfg: PreprocessConfig) -> SkeletonSequence:
    """downsample (only when the source rate is higher) -> smooth -> centralize."""
    if cfg.target_fps is not None and seq.fps > cfg.target_fps:
        seq = downsample(seq, cfg.target_fps)
    if cfg.smooth:
        seq = smooth(seq)
    if cfg.centralize:
        seq = centralize(seq, cfg.center_joint)
    return seq


def joint_covariance(sequences: Sequence[SkeletonSequence]) -> np.ndarray:
    """``|cov|`` of per-joint speed magnitudes pooled over all frames.

    For each sequence the speed of joint j at step t is the Euclidean norm of
    its displacement between frames t and t+1. Sequences with fewer than two
    frames carry no motion and are skipped with a warning.
    """
    speeds = []
    J = None
    for seq in sequences:
        if J is None:
            J = seq.joints
        elif seq.joints != J:
            raise ValueError("sequences disagree on joint count")
        if seq.T < 2:
            warnings.warn("skipping a single-frame sequence in joint_covariance")
            continue
        disp = np.diff(seq.positions(), axis=0)
        speeds.append(np.sqrt((disp * disp).sum(axis=2)))
    if not speeds:
        raise ValueError("no sequence with at least two frames")
    S = np.concatenate(speeds, axis=0)
    if S.shape[0] < 2:
        return np.zeros((J, J))
    return np.abs(np.cov(S, rowvar=False).reshape(J, J))


@dataclass
class ManifestEntry:
    path: str
    label: int
    fold: Optional[int] = None
    class_name: Optional[str] = None


@dataclass
class DatasetManifest:
    entries: list
    classes: list

    def __post_init__(self):
        paths = [e.path for e in self.entries]
        if len(set(paths)) != len(paths):
            raise ValueError("manifest paths must be unique")
        for e in self.entries:
            if not 0 <= e.label < len(self.classes):
                raise ValueError(f"label {e.label} of {e.path} outside the class table")


def read_manifest(path) -> DatasetManifest:
    path = Path(path)
    entries = []
    names = {}
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            rec = json.loads(line)
            entry = ManifestEntry(path=str(rec["path"]), label=int(rec["label"]),
                                  fold=rec.get("fold"), class_name=rec.get("class"))
        except (ValueError, KeyError, TypeError) as exc:
            raise FormatError(f"{path}:{lineno}: bad manifest record ({exc})") from None
        unknown = set(rec) - {"path", "label", "fold", "class"}
        if unknown:
            raise FormatError(f"{path}:{lineno}: unknown manifest keys {sorted(unknown)}")
        entries.append(entry)
        if entry.class_name is not None:
            if names.setdefault(entry.label, entry.class_name) != entry.class_name:
                raise FormatError(f"{path}:{lineno}: label {entry.label} has two class names")
    if not entries:
        raise FormatError(f"{path}: empty manifest")
    C = max(e.label for e in entries) + 1
    classes = [names.get(k, str(k)) for k in range(C)]
    return DatasetManifest(entries, classes)


def write_manifest(manifest: DatasetManifest, path) -> None:
    lines = []
    for e in manifest.entries:
        rec = {"path": e.path, "label": e.label, "class": manifest.classes[e.label]}
        if e.fold is not None:
            rec["fold"] = e.fold
        lines.append(json.dumps(rec))
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


@dataclass
class SynthSpec:
    """Planted co-occurrence data: each class moves its own subset of joints.

    ``active_joints`` lists 1-based joint numbers per class. In a sample of
    class c every active joint swings along the class direction with
    ``amplitude * sin(2 pi f_c t / fps + phase)``, the phase drawn once per
    sample and shared by all active joints. Every joint, active or not, also
    carries i.i.d. Gaussian noise of standard deviation ``noise`` around a
    fixed rest pose.
    """

    num_classes: int = 3
    joints: int = 10
    active_joints: list = field(default_factory=lambda: [[1, 2], [5, 6], [9, 10]])
    frequencies: list = field(default_factory=lambda: [2.0, 2.5, 3.0])
    amplitude: float = 1.5
    noise: float = 0.05
    length_range: tuple = (20, 30)
    samples_per_class: int = 30
    folds: int = 5
    fps: float = 30.0
    seed: int = 0

    def __post_init__(self):
        self.length_range = tuple(int(v) for v in self.length_range)
        if self.num_classes < 1 or self.samples_per_class < 1:
            raise ValueError("need at least one class and one sample per class")
        if len(self.active_joints) != self.num_classes or len(self.frequencies) != self.num_classes:
            raise ValueError("active_joints and frequencies need one entry per class")
        for subset in self.active_joints:
            if not subset or any(not 1 <= j <= self.joints for j in subset):
                raise ValueError(f"active joint set {subset} must be nonempty and within 1..{self.joints}")
        lo, hi = self.length_range
        if not 2 <= lo <= hi:
            raise ValueError("length_range must satisfy 2 <= min <= max")
        if self.noise < 0:
            raise ValueError("noise must be nonnegative")
        if self.folds < 1:
            raise ValueError("folds must be positive")

    @classmethod
    def from_dict(cls, d: dict) -> "SynthSpec":
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown synth spec keys: {sorted(unknown)}")
        return cls(**d)

    def to_dict(self) -> dict:
        d = asdict(self)
        d["length_range"] = list(self.length_range)
        return d


def synth_generate(spec: SynthSpec):
    """Return ``(manifest, sequences)``; deterministic given ``spec.seed``.

    Samples are ordered class by class; fold ids cycle 0..folds-1 within
    each class.
    """
    rng = np.random.default_rng(spec.seed)
    J = spec.joints
    rest = rng.uniform(-1.0, 1.0, size=(J, 3))
    directions = rng.standard_normal((spec.num_classes, 3))
    directions /= np.linalg.norm(directions, axis=1, keepdims=True)
    entries, sequences = [], []
    lo, hi = spec.length_range
    for c in range(spec.num_classes):
        active = np.asarray(spec.active_joints[c]) - 1
        omega = 2 * math.pi * spec.frequencies[c] / spec.fps
        for k in range(spec.samples_per_class):
            T = int(rng.integers(lo, hi + 1))
            phase = rng.uniform(0.0, 2 * math.pi)
            wave = spec.amplitude * np.sin(omega * np.arange(T) + phase)
            pos = np.broadcast_to(rest, (T, J, 3)).copy()
            pos[:, active, :] += wave[:, None, None] * directions[c]
            if spec.noise > 0:
                pos += spec.noise * rng.standard_normal(pos.shape)
            idx = len(sequences)
            sequences.append(SkeletonSequence(pos.reshape(T, 3 * J), spec.fps))
            entries.append(ManifestEntry(path=f"seq_{idx:05d}.csv", label=c, fold=k % spec.folds,
                                         class_name=f"class{c}"))
    classes = [f"class{c}" for c in range(spec.num_classes)]
    return DatasetManifest(entries, classes), sequences
