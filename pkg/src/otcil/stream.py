"""Task streams: synthetic generation, binary feature files, manifests.

A stream is an ordered list of tasks with disjoint class sets; each task
carries disjoint train and eval batches in encoder-input space.
"""

from __future__ import annotations

import struct
import warnings
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .config import StreamSpec
from .gaussian import FeatureBatch

FEATURE_MAGIC = b"OTCILFEATURE"  # 12 bytes; followed by u32 LE version
FEATURE_VERSION = 1
MANIFEST_VERSION = 1


@dataclass(frozen=True)
class Task:
    task_id: int
    class_ids: "tuple[int, ...]"
    train: FeatureBatch
    eval: FeatureBatch


@dataclass(frozen=True)
class TaskStream:
    tasks: "tuple[Task, ...]"

    def __post_init__(self) -> None:
        seen: set = set()
        for task in self.tasks:
            overlap = seen & set(task.class_ids)
            if overlap:
                raise ValueError(f"not class-incremental: classes {sorted(overlap)} repeat")
            seen |= set(task.class_ids)

    def __len__(self) -> int:
        return len(self.tasks)

    @property
    def input_dim(self) -> int:
        return self.tasks[0].train.dim

    @property
    def all_class_ids(self) -> "list[int]":
        return [c for t in self.tasks for c in t.class_ids]


def generate_stream(spec: StreamSpec) -> TaskStream:
    """Synthetic stream from latent per-class Gaussian generators.

    Class centers are drawn with spread ``class_separation``; samples add
    isotropic noise of scale ``within_class_scale``. With the diagnostic
    flag, the second task reuses the first task's centers under new
    labels, which makes true post-drift statistics of old classes
    observable.
    """
    rng = np.random.default_rng(spec.seed)
    n_classes = spec.num_tasks * spec.classes_per_task
    centers = spec.class_separation * rng.standard_normal((n_classes, spec.input_dim))
    if spec.diagnostic and spec.num_tasks >= 2:
        second = slice(spec.classes_per_task, 2 * spec.classes_per_task)
        centers[second] = centers[: spec.classes_per_task]

    tasks = []
    for k in range(spec.num_tasks):
        cids = list(range(k * spec.classes_per_task, (k + 1) * spec.classes_per_task))
        splits = {}
        for split, count in (("train", spec.train_per_class), ("eval", spec.eval_per_class)):
            rows, labels = [], []
            for cid in cids:
                noise = spec.within_class_scale * rng.standard_normal((count, spec.input_dim))
                rows.append(centers[cid] + noise)
                labels.append(np.full(count, cid, dtype=np.int64))
            splits[split] = FeatureBatch(
                np.concatenate(rows),
                np.concatenate(labels),
                np.full(count * len(cids), k, dtype=np.int64),
            )
        tasks.append(Task(task_id=k, class_ids=tuple(cids), train=splits["train"], eval=splits["eval"]))
    return TaskStream(tasks=tuple(tasks))


def write_feature_file(path, features: np.ndarray, labels: np.ndarray) -> None:
    """Write rows as float32 LE plus int32 LE labels under a magic header."""
    features = np.asarray(features, dtype=np.float32)
    labels = np.asarray(labels, dtype=np.int32)
    n, d = features.shape
    with open(path, "wb") as fh:
        fh.write(FEATURE_MAGIC + struct.pack("<I", FEATURE_VERSION))
        fh.write(struct.pack("<II", n, d))
        fh.write(features.astype("<f4").tobytes())
        fh.write(labels.astype("<i4").tobytes())


def read_feature_file(path) -> "tuple[np.ndarray, np.ndarray]":
    """Read a feature file, validating magic, version, and byte counts."""
    raw = Path(path).read_bytes()
    if len(raw) < 24:
        raise ValueError(f"malformed header: expected at least 24 bytes, found {len(raw)}")
    if raw[:12] != FEATURE_MAGIC:
        raise ValueError("malformed header: bad magic")
    (version,) = struct.unpack("<I", raw[12:16])
    if version != FEATURE_VERSION:
        raise ValueError(f"malformed header: unsupported version {version}")
    n, d = struct.unpack("<II", raw[16:24])
    expected = 24 + 4 * n * d + 4 * n
    if len(raw) != expected:
        raise ValueError(f"truncated file: expected {expected} bytes, found {len(raw)}")
    features = np.frombuffer(raw, dtype="<f4", count=n * d, offset=24).reshape(n, d)
    labels = np.frombuffer(raw, dtype="<i4", count=n, offset=24 + 4 * n * d)
    return features.copy(), labels.copy()


def write_manifest(path, class_to_task: "dict[int, int]", train_file: str, eval_file: str) -> None:
    lines = [f"version {MANIFEST_VERSION}", f"train {train_file}", f"eval {eval_file}"]
    for cid in sorted(class_to_task):
        lines.append(f"class {cid} task {class_to_task[cid]}")
    Path(path).write_text("\n".join(lines) + "\n", encoding="utf-8")


def read_manifest(path) -> "tuple[dict[int, int], str, str]":
    class_to_task: "dict[int, int]" = {}
    train_file = eval_file = None
    for lineno, line in enumerate(Path(path).read_text(encoding="utf-8").splitlines(), 1):
        parts = line.split()
        if not parts:
            continue
        if parts[0] == "version":
            if int(parts[1]) != MANIFEST_VERSION:
                raise ValueError(f"unsupported manifest version {parts[1]}")
        elif parts[0] == "train":
            train_file = parts[1]
        elif parts[0] == "eval":
            eval_file = parts[1]
        elif parts[0] == "class":
            if len(parts) != 4 or parts[2] != "task":
                raise ValueError(f"line {lineno}: expected 'class <id> task <id>'")
            cid, tid = int(parts[1]), int(parts[3])
            if cid in class_to_task and class_to_task[cid] != tid:
                raise ValueError("not class-incremental: class assigned to two tasks")
            class_to_task[cid] = tid
        else:
            raise ValueError(f"line {lineno}: unknown directive {parts[0]!r}")
    if train_file is None or eval_file is None:
        raise ValueError("manifest must name train and eval files")
    return class_to_task, train_file, eval_file


def export_stream(stream: TaskStream, out_dir) -> None:
    """Write a stream as train/eval feature files plus a manifest."""
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    class_to_task = {}
    for task in stream.tasks:
        for cid in task.class_ids:
            class_to_task[cid] = task.task_id
    for split in ("train", "eval"):
        feats = np.concatenate([getattr(t, split).features for t in stream.tasks])
        labels = np.concatenate([getattr(t, split).labels for t in stream.tasks])
        write_feature_file(out / f"{split}.feat", feats, labels)
    write_manifest(out / "manifest.txt", class_to_task, "train.feat", "eval.feat")


def import_features(manifest_path, validate_unit_norm: bool = False) -> TaskStream:
    """Load a stream from a manifest and its feature files.

    With ``validate_unit_norm``, rows further than 1e-3 from unit length
    are renormalized with a warning (intended for features produced by an
    external encoder).
    """
    manifest_path = Path(manifest_path)
    class_to_task, train_file, eval_file = read_manifest(manifest_path)
    base = manifest_path.parent
    splits = {}
    for name, fname in (("train", train_file), ("eval", eval_file)):
        feats, labels = read_feature_file(base / fname)
        unknown = set(labels.tolist()) - set(class_to_task)
        if unknown:
            raise ValueError(f"label outside manifest: {sorted(unknown)}")
        feats = feats.astype(np.float64)
        if validate_unit_norm and len(feats):
            norms = np.linalg.norm(feats, axis=1)
            off = np.abs(norms - 1.0) > 1e-3
            if np.any(off):
                warnings.warn(
                    f"{int(off.sum())} {name} rows renormalized to unit length",
                    RuntimeWarning,
                    stacklevel=2,
                )
                feats = feats / np.maximum(norms, 1e-12)[:, None]
        splits[name] = (feats, labels)

    task_ids = sorted(set(class_to_task.values()))
    tasks = []
    for tid in task_ids:
        cids = tuple(sorted(c for c, t in class_to_task.items() if t == tid))
        batches = {}
        for name, (feats, labels) in splits.items():
            mask = np.isin(labels, cids)
            batches[name] = FeatureBatch(
                feats[mask], labels[mask].astype(np.int64), np.full(int(mask.sum()), tid, dtype=np.int64)
            )
        tasks.append(Task(task_id=tid, class_ids=cids, train=batches["train"], eval=batches["eval"]))
    return TaskStream(tasks=tuple(tasks))
