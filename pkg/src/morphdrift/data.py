"""Drift streams: loading, writing, standardizing and synthesizing them.

Samples are kept column-wise (a feature matrix plus label/month/family
arrays) rather than as lists of objects. Unknown labels are stored as -1.
"""

from __future__ import annotations

import csv
import json
import math
from collections import Counter
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path
from typing import Iterator

import numpy as np

from morphdrift.errors import ConfigError, DataError, InputError, StreamParseError
from morphdrift.seeding import rng_for

BENIGN, MALWARE = 0, 1
UNLABELED = -1


@dataclass(frozen=True)
class Sample:
    features: np.ndarray
    label: int | None
    month: int
    family: str | None = None


@dataclass
class SampleSet:
    """A block of samples sharing one feature dimension."""

    features: np.ndarray
    labels: np.ndarray
    months: np.ndarray
    families: list[str | None] = field(default_factory=list)

    def __post_init__(self):
        self.features = np.asarray(self.features, dtype=np.float64)
        if self.features.ndim != 2:
            raise InputError(f"features must be 2-D, got shape {self.features.shape}")
        n = self.features.shape[0]
        self.labels = np.asarray(self.labels, dtype=np.int64).reshape(n)
        self.months = np.asarray(self.months, dtype=np.int64).reshape(n)
        if not self.families:
            self.families = [None] * n
        if len(self.families) != n:
            raise InputError("families length does not match sample count")

    def __len__(self) -> int:
        return self.features.shape[0]

    @property
    def dim(self) -> int:
        return self.features.shape[1]

    def subset(self, idx) -> SampleSet:
        idx = np.asarray(idx, dtype=np.int64)
        return SampleSet(
            self.features[idx], self.labels[idx], self.months[idx], [self.families[i] for i in idx]
        )

    def samples(self) -> Iterator[Sample]:
        for i in range(len(self)):
            lab = int(self.labels[i])
            yield Sample(self.features[i], None if lab == UNLABELED else lab, int(self.months[i]), self.families[i])

    @classmethod
    def empty(cls, dim: int) -> SampleSet:
        return cls(np.zeros((0, dim)), np.zeros(0, dtype=np.int64), np.zeros(0, dtype=np.int64), [])

    @classmethod
    def concat(cls, parts: list[SampleSet]) -> SampleSet:
        return cls(
            np.concatenate([p.features for p in parts]),
            np.concatenate([p.labels for p in parts]),
            np.concatenate([p.months for p in parts]),
            [f for p in parts for f in p.families],
        )


@dataclass
class MonthBatch:
    month: int
    data: SampleSet

    def __post_init__(self):
        if len(self.data) == 0:
            raise InputError(f"month {self.month} has no samples")
        if not (self.data.months == self.month).all():
            raise InputError(f"month {self.month} holds samples from other months")

    def __len__(self) -> int:
        return len(self.data)

    @property
    def features(self) -> np.ndarray:
        return self.data.features


@dataclass
class DriftStream:
    train: SampleSet
    dev: SampleSet
    test_months: list[MonthBatch]
    feature_dim: int
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        if not self.test_months:
            raise DataError("no test months")
        months = [b.month for b in self.test_months]
        if any(b <= a for a, b in zip(months, months[1:])):
            raise DataError(f"test months must be strictly increasing, got {months}")
        for part in (self.train, self.dev, *(b.data for b in self.test_months)):
            if part.dim != self.feature_dim:
                raise DataError(f"feature dimension {part.dim} != stream dimension {self.feature_dim}")

    @property
    def months(self) -> list[int]:
        return [b.month for b in self.test_months]


# ---------------------------------------------------------------- file I/O

SPLITS = ("train", "dev", "test")


def _parse_label(raw, line: int) -> int:
    if raw is None or raw == "":
        return UNLABELED
    if isinstance(raw, str):
        raw = raw.strip()
    if raw in (0, 1, "0", "1") and not isinstance(raw, bool):
        return int(raw)
    raise StreamParseError(f"unknown label value {raw!r}", line)


def _parse_month(raw, line: int) -> int:
    try:
        month = int(raw)
    except (TypeError, ValueError):
        raise StreamParseError(f"month must be an integer, got {raw!r}", line) from None
    if isinstance(raw, float) and raw != month or month < 0:
        raise StreamParseError(f"month must be a non-negative integer, got {raw!r}", line)
    return month


def _parse_split(raw, line: int) -> str:
    if raw not in SPLITS:
        raise StreamParseError(f"split must be one of {SPLITS}, got {raw!r}", line)
    return raw


def _assemble(rows: dict[str, list], dim: int, meta: dict | None = None) -> DriftStream:
    def block(split):
        r = rows[split]
        if not r:
            return SampleSet.empty(dim)
        return SampleSet(
            np.array([x[0] for x in r], dtype=np.float64).reshape(len(r), dim),
            [x[1] for x in r],
            [x[2] for x in r],
            [x[3] for x in r],
        )

    test = block("test")
    if len(test) == 0:
        raise DataError("no test months")
    batches = []
    for m in sorted(set(test.months.tolist())):
        batches.append(MonthBatch(m, test.subset(np.flatnonzero(test.months == m))))
    return DriftStream(block("train"), block("dev"), batches, dim, dict(meta or {}))


def load_csv(path) -> DriftStream:
    rows = {s: [] for s in SPLITS}
    with open(path, newline="") as fh:
        reader = csv.reader(fh)
        try:
            header = next(reader)
        except StopIteration:
            raise StreamParseError("empty file", 1) from None
        for col in ("split", "month", "label", "family"):
            if col not in header:
                raise StreamParseError(f"missing column {col!r}", 1)
        feat_cols = [c for c in header if c.startswith("f") and c[1:].isdigit()]
        feat_cols.sort(key=lambda c: int(c[1:]))
        if not feat_cols or [int(c[1:]) for c in feat_cols] != list(range(len(feat_cols))):
            raise StreamParseError("feature columns must be f0..f{d-1}", 1)
        pos = {c: header.index(c) for c in header}
        fidx = [pos[c] for c in feat_cols]
        for lineno, rec in enumerate(reader, start=2):
            if not rec:
                continue
            if len(rec) != len(header):
                raise StreamParseError(f"expected {len(header)} fields, got {len(rec)}", lineno)
            split = _parse_split(rec[pos["split"]], lineno)
            try:
                feats = [float(rec[i]) for i in fidx]
            except ValueError as exc:
                raise StreamParseError(f"bad feature value: {exc}", lineno) from None
            if not all(math.isfinite(v) for v in feats):
                raise StreamParseError("non-finite feature value", lineno)
            fam = rec[pos["family"]] or None
            rows[split].append((feats, _parse_label(rec[pos["label"]], lineno),
                                _parse_month(rec[pos["month"]], lineno), fam))
    return _assemble(rows, len(feat_cols))


def load_ndjson(path) -> DriftStream:
    rows = {s: [] for s in SPLITS}
    dim = None
    meta = {}
    with open(path) as fh:
        for lineno, text in enumerate(fh, start=1):
            text = text.strip()
            if not text:
                continue
            try:
                obj = json.loads(text)
            except json.JSONDecodeError as exc:
                raise StreamParseError(f"invalid JSON: {exc.msg}", lineno) from None
            if not isinstance(obj, dict):
                raise StreamParseError("each line must be a JSON object", lineno)
            if dim is None:
                if "feature_dim" not in obj:
                    raise StreamParseError("first line must be a header declaring feature_dim", lineno)
                dim = obj["feature_dim"]
                if not isinstance(dim, int) or dim < 1:
                    raise StreamParseError(f"feature_dim must be a positive integer, got {dim!r}", lineno)
                meta = obj.get("meta", {}) or {}
                continue
            for key in ("split", "month", "label", "family"):
                if key not in obj:
                    raise StreamParseError(f"missing key {key!r}", lineno)
            split = _parse_split(obj["split"], lineno)
            if ("dense" in obj) == ("sparse" in obj):
                raise StreamParseError("exactly one of 'dense' or 'sparse' is required", lineno)
            if "dense" in obj:
                feats = obj["dense"]
                if not isinstance(feats, list) or len(feats) != dim:
                    raise StreamParseError(f"dense row must have {dim} values", lineno)
                try:
                    feats = [float(v) for v in feats]
                except (TypeError, ValueError):
                    raise StreamParseError("dense row holds non-numeric values", lineno) from None
                if not all(math.isfinite(v) for v in feats):
                    raise StreamParseError("non-finite feature value", lineno)
            else:
                idx = obj["sparse"]
                if not isinstance(idx, list) or any(
                    not isinstance(i, int) or isinstance(i, bool) or not 0 <= i < dim for i in idx
                ):
                    raise StreamParseError(f"sparse indices must be integers in [0, {dim})", lineno)
                feats = [0.0] * dim
                for i in idx:
                    feats[i] = 1.0
            fam = obj["family"]
            if fam is not None and not isinstance(fam, str):
                raise StreamParseError("family must be a string or null", lineno)
            rows[split].append((feats, _parse_label(obj["label"], lineno),
                                _parse_month(obj["month"], lineno), fam or None))
    if dim is None:
        raise StreamParseError("empty file", 1)
    return _assemble(rows, dim, meta)


def load_stream(path, format: str | None = None) -> DriftStream:
    path = Path(path)
    if format is None:
        format = "ndjson" if path.suffix in (".ndjson", ".jsonl") else "csv"
    if format == "csv":
        return load_csv(path)
    if format == "ndjson":
        return load_ndjson(path)
    raise ConfigError(f"unknown stream format {format!r}")


def _iter_rows(stream: DriftStream):
    yield "train", stream.train
    yield "dev", stream.dev
    for b in stream.test_months:
        yield "test", b.data


def _fmt_label(lab: int) -> str:
    return "" if lab == UNLABELED else str(int(lab))


def write_stream(stream: DriftStream, path, format: str | None = None, sparse: bool = False) -> None:
    """Write ``stream`` in the format read by :func:`load_stream`.

    ``sparse=True`` (NDJSON only) stores rows as index lists and requires
    every feature to be 0 or 1.
    """
    path = Path(path)
    if format is None:
        format = "ndjson" if path.suffix in (".ndjson", ".jsonl") else "csv"
    d = stream.feature_dim
    if format == "csv":
        with open(path, "w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["split", "month", "label", "family", *(f"f{i}" for i in range(d))])
            for split, part in _iter_rows(stream):
                for i in range(len(part)):
                    w.writerow([split, int(part.months[i]), _fmt_label(part.labels[i]), part.families[i] or "",
                                *(repr(float(v)) for v in part.features[i])])
    elif format == "ndjson":
        with open(path, "w") as fh:
            header = {"feature_dim": d}
            if stream.meta:
                header["meta"] = stream.meta
            fh.write(json.dumps(header) + "\n")
            for split, part in _iter_rows(stream):
                for i in range(len(part)):
                    lab = int(part.labels[i])
                    rec = {"split": split, "month": int(part.months[i]),
                           "label": None if lab == UNLABELED else lab, "family": part.families[i]}
                    row = part.features[i]
                    if sparse:
                        if not np.isin(row, (0.0, 1.0)).all():
                            raise DataError("sparse output needs binary features")
                        rec["sparse"] = np.flatnonzero(row).tolist()
                    else:
                        rec["dense"] = [float(v) for v in row]
                    fh.write(json.dumps(rec) + "\n")
    else:
        raise ConfigError(f"unknown stream format {format!r}")


# ---------------------------------------------------------- standardization


@dataclass
class Standardizer:
    mean: np.ndarray
    std: np.ndarray

    def transform(self, x: np.ndarray) -> np.ndarray:
        return (np.asarray(x, dtype=np.float64) - self.mean) / self.std

    def inverse(self, z: np.ndarray) -> np.ndarray:
        return np.asarray(z, dtype=np.float64) * self.std + self.mean

    def apply(self, samples: SampleSet) -> SampleSet:
        return replace(samples, features=self.transform(samples.features))


def fit_standardizer(train: SampleSet | np.ndarray) -> Standardizer:
    x = train.features if isinstance(train, SampleSet) else np.asarray(train, dtype=np.float64)
    if x.shape[0] == 0:
        raise InputError("cannot fit a standardizer on an empty training set")
    mean = x.mean(axis=0)
    std = x.std(axis=0)
    # constant columns keep std 1 so they map to exactly 0
    std = np.where(std > 1e-12 * np.maximum(1.0, np.abs(mean)), std, 1.0)
    return Standardizer(mean, std)


def standardize_stream(stream: DriftStream, standardizer: Standardizer | None = None) -> tuple[DriftStream, Standardizer]:
    """Transform every split with statistics fit once on the training split."""
    st = standardizer or fit_standardizer(stream.train)
    out = DriftStream(
        st.apply(stream.train),
        st.apply(stream.dev),
        [MonthBatch(b.month, st.apply(b.data)) for b in stream.test_months],
        stream.feature_dim,
        dict(stream.meta),
    )
    return out, st


# ---------------------------------------------------------------- synthetic


@dataclass
class SyntheticConfig:
    """Rotating two-Gaussian stream.

    Class means start at (-1, 0, ...) for benign and (+1, 0, ...) for malware
    and rotate by ``rotation_deg`` per month in the plane of the first two
    features. With ``n_families > 1`` malware is a mixture of clusters spread
    over ``family_spread_deg`` degrees on the malware side of the unit circle,
    and family ``k`` has frequency proportional to ``family_decay ** k`` in the
    training split (test months draw families uniformly).
    """

    feature_dim: int = 10
    months: int = 12
    rotation_deg: float = 10.0
    sigma: float = 0.05
    samples_per_month: int = 500
    malware_fraction: float = 0.5
    new_family_fraction: float = 0.0
    new_family_shift: float = 0.5
    n_families: int = 1
    family_spread_deg: float = 120.0
    family_decay: float = 0.7
    train_size: int | None = None
    dev_size: int | None = None

    def validate(self) -> None:
        if self.feature_dim < 2:
            raise ConfigError("feature_dim must be >= 2")
        if self.months < 1:
            raise ConfigError("months must be >= 1")
        if not self.sigma > 0:
            raise ConfigError("sigma must be > 0")
        if not 0 <= self.rotation_deg <= 90:
            raise ConfigError("rotation_deg must be in [0, 90]")
        if self.samples_per_month < 1:
            raise ConfigError("samples_per_month must be >= 1")
        if not 0 < self.malware_fraction < 1:
            raise ConfigError("malware_fraction must be in (0, 1)")
        if not 0 <= self.new_family_fraction <= 1:
            raise ConfigError("new_family_fraction must be in [0, 1]")
        if self.n_families < 1:
            raise ConfigError("n_families must be >= 1")
        if not 0 < self.family_decay <= 1:
            raise ConfigError("family_decay must be in (0, 1]")


def class_means(config: SyntheticConfig, month: int) -> tuple[np.ndarray, np.ndarray]:
    """(benign mean, malware base mean) for ``month``."""
    theta = math.radians(config.rotation_deg * month)
    mal = np.zeros(config.feature_dim)
    mal[0], mal[1] = math.cos(theta), math.sin(theta)
    return -mal, mal


def family_means(config: SyntheticConfig, month: int) -> np.ndarray:
    """One malware mean per family, shape (n_families, feature_dim)."""
    theta0 = math.radians(config.rotation_deg * month)
    k = config.n_families
    if k == 1:
        offsets = np.zeros(1)
    else:
        half = math.radians(config.family_spread_deg) / 2
        offsets = np.linspace(-half, half, k)
    # order families by distance from the malware axis so family 0 is central
    offsets = offsets[np.argsort(np.abs(offsets), kind="stable")]
    out = np.zeros((k, config.feature_dim))
    out[:, 0] = np.cos(theta0 + offsets)
    out[:, 1] = np.sin(theta0 + offsets)
    return out


def _draw_month(config: SyntheticConfig, month: int, n: int, rng: np.random.Generator,
                family_weights: np.ndarray) -> SampleSet:
    benign_mu, _ = class_means(config, month)
    fam_mu = family_means(config, month)
    labels = (rng.random(n) < config.malware_fraction).astype(np.int64)
    fam_idx = rng.choice(config.n_families, size=n, p=family_weights)
    shifted = rng.random(n) < config.new_family_fraction
    means = np.where(labels[:, None] == MALWARE, fam_mu[fam_idx], benign_mu)
    if config.new_family_fraction > 0:
        # new-family malware: pushed outward along the second feature
        push = np.zeros(config.feature_dim)
        push[1] = config.new_family_shift
        means = means + np.where((labels == MALWARE) & shifted, 1.0, 0.0)[:, None] * push
    x = means + config.sigma * rng.standard_normal((n, config.feature_dim))
    families = []
    for i in range(n):
        if labels[i] != MALWARE:
            families.append(None)
        elif config.n_families > 1:
            families.append(f"fam{fam_idx[i]:02d}" + ("-new" if shifted[i] else ""))
        else:
            families.append(f"m{month:03d}" + ("-new" if shifted[i] else ""))
    return SampleSet(x, labels, np.full(n, month), families)


def gen_synthetic(config: SyntheticConfig, seed: int) -> DriftStream:
    """Month 0 supplies train and dev; months 1..T are the test stream."""
    config.validate()
    k = config.n_families
    train_w = config.family_decay ** np.arange(k)
    train_w /= train_w.sum()
    test_w = np.full(k, 1.0 / k)
    n_train = config.train_size or config.samples_per_month
    n_dev = config.dev_size or config.samples_per_month
    train = _draw_month(config, 0, n_train, rng_for(seed, "synthetic", "train"), train_w)
    dev = _draw_month(config, 0, n_dev, rng_for(seed, "synthetic", "dev"), train_w)
    batches = [
        MonthBatch(m, _draw_month(config, m, config.samples_per_month, rng_for(seed, "synthetic", m), test_w))
        for m in range(1, config.months + 1)
    ]
    meta = {"synthetic": asdict(config), "seed": int(seed)}
    return DriftStream(train, dev, batches, config.feature_dim, meta)


# ----------------------------------------------------------------- families


def limit_families(stream: DriftStream, top_k: int) -> DriftStream:
    """Keep only training malware from the ``top_k`` most frequent families.

    Ties in frequency go to the lexicographically smaller name. Benign
    training samples, the dev split and the test months are left alone.
    """
    if top_k < 1:
        raise ConfigError(f"top_k must be >= 1, got {top_k}")
    train = stream.train
    mal = np.flatnonzero(train.labels == MALWARE)
    fams = [train.families[i] for i in mal]
    if any(f is None for f in fams):
        raise InputError("training malware without a family tag")
    counts = Counter(fams)
    keep = {f for f, _ in sorted(counts.items(), key=lambda kv: (-kv[1], kv[0]))[:top_k]}
    mask = np.array([lab != MALWARE or train.families[i] in keep for i, lab in enumerate(train.labels)], dtype=bool)
    meta = dict(stream.meta)
    meta["top_k_families"] = int(top_k)
    return DriftStream(train.subset(np.flatnonzero(mask)), stream.dev, stream.test_months, stream.feature_dim, meta)
