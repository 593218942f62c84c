"""Seeded synthetic multimodal classification datasets.

The generative model is Gaussian class-conditional per modality: class h and
modality i get a unit-norm mean direction ``mu[h, i]`` drawn once from the
seeded generator, and a sample with label y has features
``signal[i] * mu[y, i] + sigma * eps`` with standard normal ``eps``. The
per-modality ``signal`` scale is the imbalance knob: a larger scale makes
that modality carry more class information by construction.

Labels are 0-based (0 .. H-1) everywhere, including on disk.

Dataset file format (text, one record per line)::

    MMDS v1
    m=<int> H=<int> N=<int> dims=<d1,...,dm>
    <label>|<v1 ... v_d1>|<v1 ... v_d2>|...

Values are decimal with 17 significant digits, which round-trips float64
bitwise.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .errors import FormatError, SpecError

_FLOAT_FMT = "%.17g"


@dataclass(frozen=True)
class SyntheticSpec:
    """Recipe for one synthetic dataset; equal specs generate equal datasets."""

    num_modalities: int
    num_classes: int
    dims: tuple[int, ...]
    signal: tuple[float, ...]
    sigma: float
    samples: int
    seed: int

    def __post_init__(self):
        object.__setattr__(self, "dims", tuple(int(d) for d in self.dims))
        object.__setattr__(self, "signal", tuple(float(s) for s in self.signal))
        if self.num_modalities not in (2, 3):
            raise SpecError(f"num_modalities must be 2 or 3, got {self.num_modalities}")
        if self.num_classes < 2:
            raise SpecError(f"num_classes must be >= 2, got {self.num_classes}")
        if len(self.dims) != self.num_modalities:
            raise SpecError("one dimension per modality required")
        if any(d < 1 for d in self.dims):
            raise SpecError(f"all dims must be >= 1, got {self.dims}")
        if len(self.signal) != self.num_modalities:
            raise SpecError("one signal scale per modality required")
        if any(s < 0 for s in self.signal):
            raise SpecError(f"signal scales must be non-negative, got {self.signal}")
        if self.sigma <= 0:
            raise SpecError(f"sigma must be positive, got {self.sigma}")
        if self.samples < self.num_classes:
            raise SpecError(
                f"need at least one sample per class: N={self.samples} < H={self.num_classes}"
            )


@dataclass
class Dataset:
    """Per-sample, per-modality feature matrices plus 0-based class labels.

    ``origin`` is the generating SyntheticSpec, or a short tag for data that
    came from a file. Values are immutable by convention once constructed.
    """

    features: list[np.ndarray]
    labels: np.ndarray
    num_classes: int
    origin: SyntheticSpec | str = "external"

    def __post_init__(self):
        self.labels = np.asarray(self.labels, dtype=np.int64)
        self.features = [np.ascontiguousarray(f, dtype=np.float64) for f in self.features]
        n = self.labels.shape[0]
        for i, f in enumerate(self.features):
            if f.ndim != 2 or f.shape[0] != n:
                raise SpecError(f"modality {i} features must be ({n}, d), got {f.shape}")
        if n and (self.labels.min() < 0 or self.labels.max() >= self.num_classes):
            raise SpecError("labels outside 0..H-1")

    @property
    def num_modalities(self) -> int:
        return len(self.features)

    @property
    def num_samples(self) -> int:
        return int(self.labels.shape[0])

    @property
    def dims(self) -> tuple[int, ...]:
        return tuple(f.shape[1] for f in self.features)

    def subset(self, idx: np.ndarray) -> "Dataset":
        return Dataset(
            [f[idx].copy() for f in self.features],
            self.labels[idx].copy(),
            self.num_classes,
            self.origin,
        )

    def select_modalities(self, keep: list[int]) -> "Dataset":
        """View of the dataset restricted to the given modality indices."""
        return Dataset(
            [self.features[i].copy() for i in keep],
            self.labels.copy(),
            self.num_classes,
            "derived",
        )


def class_means(spec: SyntheticSpec) -> list[np.ndarray]:
    """Unit-norm per-class mean directions, one (H, d_i) array per modality.

    These are the first draws from the spec's generator, so they match the
    means used inside :func:`generate` exactly.
    """
    rng = np.random.default_rng(spec.seed)
    means = []
    for d in spec.dims:
        raw = rng.standard_normal((spec.num_classes, d))
        means.append(raw / np.linalg.norm(raw, axis=1, keepdims=True))
    return means


def generate(spec: SyntheticSpec) -> Dataset:
    """Draw one dataset from the spec. Identical specs give identical bytes.

    Generator consumption order is fixed: class means per modality, then
    labels, then per-modality noise. Labels are drawn uniformly and then
    adjusted deterministically so every class appears at least once.
    """
    rng = np.random.default_rng(spec.seed)
    means = []
    for d in spec.dims:
        raw = rng.standard_normal((spec.num_classes, d))
        means.append(raw / np.linalg.norm(raw, axis=1, keepdims=True))
    labels = rng.integers(0, spec.num_classes, size=spec.samples).astype(np.int64)

    counts = np.bincount(labels, minlength=spec.num_classes)
    for h in range(spec.num_classes):
        if counts[h] == 0:
            # steal the first sample whose class still has spares
            for k in range(spec.samples):
                if counts[labels[k]] > 1:
                    counts[labels[k]] -= 1
                    labels[k] = h
                    counts[h] += 1
                    break

    features = []
    for i, d in enumerate(spec.dims):
        eps = rng.standard_normal((spec.samples, d))
        features.append(spec.signal[i] * means[i][labels] + spec.sigma * eps)
    return Dataset(features, labels, spec.num_classes, spec)


def _largest_remainder(fractions: tuple[float, ...], total: int) -> list[int]:
    raw = [f * total for f in fractions]
    sizes = [int(np.floor(r)) for r in raw]
    remainders = [r - s for r, s in zip(raw, sizes)]
    short = total - sum(sizes)
    # ties go to the earlier split
    order = sorted(range(len(fractions)), key=lambda j: (-remainders[j], j))
    for j in order[:short]:
        sizes[j] += 1
    return sizes


def split(
    data: Dataset, fractions: tuple[float, float, float], seed: int
) -> tuple[Dataset, Dataset, Dataset]:
    """Deterministic stratified train/val/test split.

    Fractions must be positive and sum to 1 within 1e-9. Global split sizes
    follow the largest-remainder rule; within each class, indices are
    shuffled by the seeded generator and allocated proportionally, so the
    split is stratified whenever class counts permit. Small splits may lack
    some classes; ``num_classes`` is carried over regardless.
    """
    if len(fractions) != 3:
        raise SpecError("exactly three fractions (train, val, test) required")
    if any(f <= 0 for f in fractions):
        raise SpecError(f"all fractions must be positive, got {fractions}")
    if abs(sum(fractions) - 1.0) > 1e-9:
        raise SpecError(f"fractions must sum to 1, got {sum(fractions)}")
    n = data.num_samples
    sizes = _largest_remainder(tuple(fractions), n)
    if any(s == 0 for s in sizes):
        raise SpecError(f"split sizes {sizes} include an empty split for N={n}")

    rng = np.random.default_rng(seed)
    buckets: list[list[int]] = [[], [], []]
    leftover: list[int] = []
    for h in range(data.num_classes):
        idx = np.flatnonzero(data.labels == h)
        idx = idx[rng.permutation(idx.size)]
        base = [int(np.floor(f * idx.size)) for f in fractions]
        pos = 0
        for s in range(3):
            buckets[s].extend(idx[pos : pos + base[s]].tolist())
            pos += base[s]
        leftover.extend(idx[pos:].tolist())
    # top up deficits in split order from the leftover pool
    pos = 0
    for s in range(3):
        need = sizes[s] - len(buckets[s])
        buckets[s].extend(leftover[pos : pos + need])
        pos += need
    parts = []
    for s in range(3):
        order = np.array(sorted(buckets[s]), dtype=np.int64)
        parts.append(data.subset(order))
    return parts[0], parts[1], parts[2]


def batches(
    data: Dataset,
    batch_size: int,
    shuffle_seed: int,
    weights: np.ndarray | None = None,
) -> list[np.ndarray]:
    """Index batches for one epoch.

    Without weights: a seeded permutation of all indices chunked into batches
    (the last may be short). With weights: N draws by weighted sampling with
    replacement, chunked the same way. Weights must be non-negative with at
    least one positive entry; zero-weight samples are never drawn.
    """
    if batch_size < 1:
        raise SpecError(f"batch_size must be >= 1, got {batch_size}")
    n = data.num_samples
    rng = np.random.default_rng(shuffle_seed)
    if weights is None:
        order = rng.permutation(n)
    else:
        w = np.asarray(weights, dtype=np.float64)
        if w.shape != (n,):
            raise SpecError(f"weights must have length {n}, got shape {w.shape}")
        if np.any(w < 0):
            raise SpecError("weights must be non-negative")
        total = w.sum()
        if total <= 0:
            raise SpecError("at least one weight must be positive")
        order = rng.choice(n, size=n, replace=True, p=w / total)
    return [order[k : k + batch_size] for k in range(0, n, batch_size)]


def save(data: Dataset, path) -> None:
    """Write the dataset in the MMDS v1 text format."""
    dims = ",".join(str(d) for d in data.dims)
    with open(path, "w", encoding="ascii") as fh:
        fh.write("MMDS v1\n")
        fh.write(
            f"m={data.num_modalities} H={data.num_classes} N={data.num_samples} dims={dims}\n"
        )
        for k in range(data.num_samples):
            cols = [str(int(data.labels[k]))]
            for f in data.features:
                cols.append(" ".join(_FLOAT_FMT % v for v in f[k]))
            fh.write("|".join(cols) + "\n")


def load(path) -> Dataset:
    """Read an MMDS v1 file; inverse of :func:`save` bit for bit."""
    with open(path, "r", encoding="ascii") as fh:
        lines = fh.read().splitlines()
    if not lines:
        raise FormatError("empty file", line=1)
    if lines[0] != "MMDS v1":
        raise FormatError(f"bad magic {lines[0]!r}, expected 'MMDS v1'", line=1)
    if len(lines) < 2:
        raise FormatError("missing header line", line=2)
    header: dict[str, str] = {}
    for tok in lines[1].split():
        if "=" not in tok:
            raise FormatError(f"bad header token {tok!r}", line=2)
        key, val = tok.split("=", 1)
        header[key] = val
    try:
        m = int(header["m"])
        num_classes = int(header["H"])
        n = int(header["N"])
        dims = tuple(int(d) for d in header["dims"].split(","))
    except (KeyError, ValueError) as exc:
        raise FormatError(f"bad header: {exc}", line=2) from None
    if len(dims) != m:
        raise FormatError(f"dims lists {len(dims)} values for m={m}", line=2)
    if len(lines) - 2 != n:
        raise FormatError(f"header declares N={n} but file has {len(lines) - 2} records", line=2)

    labels = np.empty(n, dtype=np.int64)
    features = [np.empty((n, d), dtype=np.float64) for d in dims]
    for k in range(n):
        lineno = k + 3
        parts = lines[k + 2].split("|")
        if len(parts) != m + 1:
            raise FormatError(f"expected {m + 1} '|'-fields, got {len(parts)}", line=lineno)
        try:
            labels[k] = int(parts[0])
        except ValueError:
            raise FormatError(f"bad label {parts[0]!r}", line=lineno) from None
        if not (0 <= labels[k] < num_classes):
            raise FormatError(f"label {labels[k]} outside 0..{num_classes - 1}", line=lineno)
        for i in range(m):
            vals = parts[i + 1].split()
            if len(vals) != dims[i]:
                raise FormatError(
                    f"modality {i} has {len(vals)} values, header declares {dims[i]}",
                    line=lineno,
                )
            try:
                features[i][k] = [float(v) for v in vals]
            except ValueError:
                raise FormatError(f"bad float in modality {i}", line=lineno) from None
    return Dataset(features, labels, num_classes, origin="file")
