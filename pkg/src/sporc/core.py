"""Data model, JSON-lines dataset I/O, seeded RNG streams and the four-way split."""

from __future__ import annotations

import json
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from sporc.errors import DimMismatch, EmptyPart, ParseError

PART_NAMES = ("predictor", "calibration", "training", "target")


def make_rng(seed, *stream):
    """Return a Philox (counter-based) generator for ``seed`` and a named sub-stream.

    Sub-streams are derived through ``numpy.random.SeedSequence`` so that, e.g.,
    ``make_rng(7, "split")`` and ``make_rng(7, "noise")`` are independent but both
    fully determined by ``7``. String keys are hashed with a fixed byte-level
    fold, never with Python's salted ``hash``.
    """
    words = [int(seed) & 0xFFFFFFFFFFFFFFFF]
    for key in stream:
        if isinstance(key, str):
            h = 1469598103934665603
            for byte in key.encode("utf-8"):
                h = ((h ^ byte) * 1099511628211) & 0xFFFFFFFFFFFFFFFF
            words.append(h)
        else:
            words.append(int(key) & 0xFFFFFFFFFFFFFFFF)
    return np.random.Generator(np.random.Philox(np.random.SeedSequence(words)))


@dataclass(frozen=True)
class ContextSample:
    x: np.ndarray
    c: np.ndarray
    a: np.ndarray  # shape (m_c, d)


class Dataset:
    """Immutable collection of ``(x, c, a)`` samples stored as stacked arrays.

    ``x`` has shape ``(n, p)``, ``c`` has shape ``(n, d)`` and ``a`` has shape
    ``(n, m_c, d)``.
    """

    __slots__ = ("x", "c", "a")

    def __init__(self, x, c, a):
        x = np.array(x, dtype=float, copy=True)
        c = np.array(c, dtype=float, copy=True)
        a = np.array(a, dtype=float, copy=True)
        if x.ndim != 2 or c.ndim != 2 or a.ndim != 3:
            raise DimMismatch(
                f"expected x (n,p), c (n,d), a (n,m_c,d); got {x.shape}, {c.shape}, {a.shape}"
            )
        n = x.shape[0]
        if c.shape[0] != n or a.shape[0] != n:
            raise DimMismatch(f"sample counts differ: {x.shape[0]}, {c.shape[0]}, {a.shape[0]}")
        if n and a.shape[2] != c.shape[1]:
            raise DimMismatch(f"constraint rows have length {a.shape[2]} but d = {c.shape[1]}")
        for name, arr in (("x", x), ("c", c), ("a", a)):
            if not np.all(np.isfinite(arr)):
                raise ValueError(f"non-finite entries in {name}")
            arr.setflags(write=False)
        object.__setattr__(self, "x", x)
        object.__setattr__(self, "c", c)
        object.__setattr__(self, "a", a)

    def __setattr__(self, name, value):
        raise AttributeError("Dataset is immutable")

    @classmethod
    def empty(cls, p=0, d=0, m_c=0):
        return cls(np.zeros((0, p)), np.zeros((0, d)), np.zeros((0, m_c, d)))

    @classmethod
    def from_samples(cls, samples):
        samples = list(samples)
        if not samples:
            return cls.empty()
        return cls(
            np.stack([np.asarray(s.x, float) for s in samples]),
            np.stack([np.asarray(s.c, float) for s in samples]),
            np.stack([np.asarray(s.a, float).reshape(-1, len(s.c)) for s in samples]),
        )

    @property
    def n(self):
        return self.x.shape[0]

    @property
    def dims(self):
        """``(n, p, d, m_c)``."""
        return (self.n, self.x.shape[1], self.c.shape[1], self.a.shape[1])

    def __len__(self):
        return self.n

    def __getitem__(self, i):
        return ContextSample(self.x[i], self.c[i], self.a[i])

    def __iter__(self):
        for i in range(self.n):
            yield self[i]

    def subset(self, idx):
        idx = np.asarray(idx, dtype=np.intp)
        return Dataset(self.x[idx], self.c[idx], self.a[idx])

    def concat(self, other):
        return Dataset(
            np.concatenate([self.x, other.x]),
            np.concatenate([self.c, other.c]),
            np.concatenate([self.a, other.a]),
        )

    def __eq__(self, other):
        if not isinstance(other, Dataset):
            return NotImplemented
        return (
            self.dims == other.dims
            and np.array_equal(self.x, other.x)
            and np.array_equal(self.c, other.c)
            and np.array_equal(self.a, other.a)
        )

    __hash__ = None

    def __repr__(self):
        n, p, d, m = self.dims
        return f"Dataset(n={n}, p={p}, d={d}, m_c={m})"


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple = (0.25, 0.25, 0.40, 0.10)
    seed: int = 0

    def __post_init__(self):
        fr = tuple(float(f) for f in self.fractions)
        if len(fr) != 4:
            raise ValueError("SplitSpec needs exactly four fractions")
        if any(f < 0 or not math.isfinite(f) for f in fr):
            raise ValueError(f"fractions must be finite and nonnegative, got {fr}")
        if abs(math.fsum(fr) - 1.0) > 1e-12:
            raise ValueError(f"fractions must sum to 1, got {math.fsum(fr)!r}")
        object.__setattr__(self, "fractions", fr)

    def sizes(self, n):
        sizes = [int(math.floor(f * n)) for f in self.fractions]
        # floor remainder goes to the training part
        sizes[2] += n - sum(sizes)
        return sizes


def split_indices(n, spec):
    """Index arrays of the four parts, in ``PART_NAMES`` order."""
    if n < 4:
        raise EmptyPart(f"need at least 4 samples to split, got {n}")
    sizes = spec.sizes(n)
    for name, size in zip(PART_NAMES, sizes):
        if size == 0:
            raise EmptyPart(f"part {name!r} is empty for n={n}, fractions={spec.fractions}")
    perm = make_rng(spec.seed, "four_way_split").permutation(n)
    bounds = np.cumsum([0] + sizes)
    return tuple(np.sort(perm[bounds[k]:bounds[k + 1]]) for k in range(4))


def four_way_split(dataset, spec):
    """Partition into (predictor-fit, calibration, training, target) datasets."""
    return tuple(dataset.subset(idx) for idx in split_indices(dataset.n, spec))


# ---------------------------------------------------------------------------
# JSON-lines I/O


def _record(sample):
    return {
        "x": [float(v) for v in sample.x],
        "c": [float(v) for v in sample.c],
        "a": [[float(v) for v in row] for row in sample.a],
    }


def write_dataset(path, dataset):
    path = Path(path)
    with path.open("w", encoding="utf-8") as fh:
        for sample in dataset:
            # json.dumps uses repr for floats, which round-trips exactly
            fh.write(json.dumps(_record(sample), separators=(",", ":")))
            fh.write("\n")


def _vector(obj, key, lineno):
    if key not in obj:
        raise ParseError(f"record is missing field {key!r}", lineno)
    val = obj[key]
    if not isinstance(val, list) or not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in val):
        raise ParseError(f"field {key!r} must be a list of numbers", lineno)
    return val


def read_dataset(path):
    xs, cs, as_ = [], [], []
    dims = None
    with Path(path).open("r", encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if not line.strip():
                continue
            try:
                obj = json.loads(line)
            except json.JSONDecodeError as exc:
                raise ParseError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise ParseError("record must be a JSON object", lineno)
            x = _vector(obj, "x", lineno)
            c = _vector(obj, "c", lineno)
            if "a" not in obj:
                raise ParseError("record is missing field 'a'", lineno)
            a = obj["a"]
            if not isinstance(a, list) or not a or not all(isinstance(r, list) for r in a):
                raise ParseError("field 'a' must be a nonempty list of lists", lineno)
            for row in a:
                if not all(isinstance(v, (int, float)) and not isinstance(v, bool) for v in row):
                    raise ParseError("field 'a' must contain only numbers", lineno)
            these = (len(x), len(c), len(a))
            if any(len(row) != len(c) for row in a):
                raise DimMismatch(f"line {lineno}: constraint rows must have length d={len(c)}")
            if dims is None:
                dims = these
            elif these != dims:
                raise DimMismatch(f"line {lineno}: dims (p, d, m_c) = {these}, expected {dims}")
            xs.append(x)
            cs.append(c)
            as_.append(a)
    if dims is None:
        return Dataset.empty()
    return Dataset(np.array(xs, float), np.array(cs, float), np.array(as_, float))


def dataset_io(path, mode, dataset=None):
    if mode == "read":
        return read_dataset(path)
    if mode == "write":
        if dataset is None:
            raise ValueError("write mode needs a dataset")
        write_dataset(path, dataset)
        return None
    raise ValueError(f"mode must be 'read' or 'write', got {mode!r}")
