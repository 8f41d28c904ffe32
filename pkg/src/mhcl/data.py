"""Rating ingestion, deterministic splits, per-rating normalized subgraphs and user cohorts."""
from __future__ import annotations

import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import NamedTuple

import numpy as np
import scipy.sparse as sp

from .errors import ContractError, ParseError, ValidationError

logger = logging.getLogger(__name__)

INACTIVE, NORMAL, ACTIVE = "Inactive", "Normal", "Active"
COHORTS = (INACTIVE, NORMAL, ACTIVE)


class RatingRecord(NamedTuple):
    user: int
    item: int
    rating: int
    timestamp: int = 0


@dataclass(frozen=True)
class Schema:
    """How to read a ratings file: column order, delimiter, rating scale and optional bucketing."""

    columns: tuple = ("user", "item", "rating", "timestamp")
    delimiter: str = "\t"
    scale_min: int = 1
    scale_max: int = 5
    header: bool = False
    buckets: int | None = None

    @property
    def categories(self) -> list[int]:
        if self.buckets:
            return list(range(1, self.buckets + 1))
        return list(range(self.scale_min, self.scale_max + 1))


PRESETS = {
    "ml-100k": Schema(),
    "ml-100k-recbole": Schema(header=True),
    "yahoomusic": Schema(scale_min=1, scale_max=100, buckets=10),
}


def parse_schema(descriptor: str | None) -> Schema:
    """Build a Schema from a preset name or ``key=value`` pairs separated by ``;``.

    Keys: columns (comma list), delimiter (``tab``, ``comma`` or a literal), scale (``lo-hi``),
    header (0/1), buckets (int), preset (base to override).
    """
    if not descriptor:
        return Schema()
    if descriptor in PRESETS:
        return PRESETS[descriptor]
    path = Path(descriptor)
    if path.is_file():
        descriptor = ";".join(
            line.strip() for line in path.read_text().splitlines() if line.strip() and not line.startswith("#")
        )
    opts = {}
    for chunk in descriptor.split(";"):
        if not chunk.strip():
            continue
        if "=" not in chunk:
            raise ParseError(f"schema entry {chunk!r} is not key=value")
        key, value = (s.strip() for s in chunk.split("=", 1))
        opts[key] = value
    base = PRESETS.get(opts.pop("preset", ""), Schema())
    kwargs = {}
    for key, value in opts.items():
        if key == "columns":
            kwargs["columns"] = tuple(c.strip() for c in value.split(","))
        elif key == "delimiter":
            kwargs["delimiter"] = {"tab": "\t", "comma": ",", "space": " "}.get(value, value)
        elif key == "scale":
            lo, hi = value.split("-")
            kwargs["scale_min"], kwargs["scale_max"] = int(lo), int(hi)
        elif key == "header":
            kwargs["header"] = value.lower() in ("1", "true", "yes")
        elif key == "buckets":
            kwargs["buckets"] = int(value) if value not in ("", "0", "none") else None
        else:
            raise ParseError(f"unknown schema key {key!r}")
    schema = Schema(**{**base.__dict__, **kwargs})
    for required in ("user", "item", "rating"):
        if required not in schema.columns:
            raise ParseError(f"schema columns must include {required!r}")
    return schema


@dataclass
class RatingTable:
    """Ingested records with dense ids plus the tables mapping dense ids back to raw ids."""

    records: list
    user_ids: list
    item_ids: list
    categories: list
    duplicates: int = 0

    @property
    def n_users(self):
        return len(self.user_ids)

    @property
    def n_items(self):
        return len(self.item_ids)


def _parse_rating(token: str, lineno: int) -> int:
    try:
        value = float(token)
    except ValueError:
        raise ParseError(f"line {lineno}: rating {token!r} is not numeric") from None
    if value != int(value):
        raise ValidationError(f"line {lineno}: rating {token!r} is not an integer category")
    return int(value)


def load_tsv(path, schema: Schema | None = None) -> RatingTable:
    schema = schema or Schema()
    col = {name: i for i, name in enumerate(schema.columns)}
    width = len(schema.columns)
    user_index: dict = {}
    item_index: dict = {}
    latest: dict = {}
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            if schema.header and lineno == 1:
                continue
            line = line.rstrip("\r\n")
            if not line.strip():
                continue
            fields = line.split(schema.delimiter)
            if len(fields) < width:
                raise ParseError(f"line {lineno}: expected {width} fields, got {len(fields)}")
            rating = _parse_rating(fields[col["rating"]].strip(), lineno)
            if not schema.scale_min <= rating <= schema.scale_max:
                raise ValidationError(
                    f"line {lineno}: rating {rating} outside scale {schema.scale_min}-{schema.scale_max}"
                )
            ts = 0
            if "timestamp" in col:
                try:
                    ts = int(float(fields[col["timestamp"]]))
                except ValueError:
                    raise ParseError(f"line {lineno}: bad timestamp {fields[col['timestamp']]!r}") from None
            u = user_index.setdefault(fields[col["user"]].strip(), len(user_index))
            v = item_index.setdefault(fields[col["item"]].strip(), len(item_index))
            if (u, v) in latest:
                duplicates += 1
                del latest[(u, v)]
            latest[(u, v)] = RatingRecord(u, v, rating, ts)
    if duplicates:
        logger.warning("%s: %d duplicate (user, item) pairs, kept the last occurrence", path, duplicates)
    records = list(latest.values())
    if schema.buckets:
        records = bucket_scale(records, schema.buckets, schema.scale_max)
    return RatingTable(records, list(user_index), list(item_index), schema.categories, duplicates)


def bucket_scale(records, target_buckets: int = 10, scale_max: int = 100):
    """Map each rating to ``ceil(r / (scale_max / target_buckets))``."""
    width = scale_max / target_buckets
    return [r._replace(rating=max(1, math.ceil(r.rating / width - 1e-9))) for r in records]


# splits -------------------------------------------------------------------------


@dataclass(frozen=True)
class Split:
    users: np.ndarray
    items: np.ndarray
    ratings: np.ndarray

    def __len__(self):
        return len(self.users)

    @classmethod
    def from_records(cls, records):
        if not records:
            empty = np.zeros(0, dtype=np.int64)
            return cls(empty, empty.copy(), empty.copy())
        arr = np.array([(r.user, r.item, r.rating) for r in records], dtype=np.int64)
        return cls(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy())

    def records(self):
        return [RatingRecord(int(u), int(v), int(r)) for u, v, r in zip(self.users, self.items, self.ratings)]


@dataclass(frozen=True)
class RatingDataset:
    n_users: int
    n_items: int
    categories: tuple
    train: Split
    val: Split
    test: Split
    user_ids: tuple = ()
    item_ids: tuple = ()

    @property
    def n_nodes(self):
        return self.n_users + self.n_items

    def category_index(self, ratings):
        """Position of each rating inside ``categories``."""
        lookup = {r: i for i, r in enumerate(self.categories)}
        try:
            return np.array([lookup[int(r)] for r in ratings], dtype=np.int64)
        except KeyError as exc:
            raise ContractError(f"rating {exc.args[0]} is not a declared category") from None


def split(records, seed: int, ratios=(0.8, 0.1, 0.1), n_users=None, n_items=None, categories=None,
          user_ids=(), item_ids=()) -> RatingDataset:
    """Shuffle deterministically under ``seed`` then cut contiguous train/val/test blocks."""
    if len(ratios) != 3 or abs(sum(ratios) - 1.0) > 1e-9 or min(ratios) < 0:
        raise ContractError(f"ratios must be three non-negative numbers summing to 1, got {ratios}")
    n = len(records)
    if n < 10:
        raise ContractError(f"need at least 10 records to split, got {n}")
    order = np.random.default_rng(seed).permutation(n)
    n_train = int(round(n * ratios[0]))
    n_val = int(round(n * ratios[1]))
    shuffled = [records[i] for i in order]
    parts = shuffled[:n_train], shuffled[n_train:n_train + n_val], shuffled[n_train + n_val:]
    if n_users is None:
        n_users = max(r.user for r in records) + 1
    if n_items is None:
        n_items = max(r.item for r in records) + 1
    if categories is None:
        categories = sorted({r.rating for r in records})
    return RatingDataset(
        n_users, n_items, tuple(categories),
        *(Split.from_records(p) for p in parts),
        user_ids=tuple(user_ids), item_ids=tuple(item_ids),
    )


def split_table(table: RatingTable, seed: int, ratios=(0.8, 0.1, 0.1)) -> RatingDataset:
    return split(table.records, seed, ratios, table.n_users, table.n_items, table.categories,
                 table.user_ids, table.item_ids)


# subgraphs ------------------------------------------------------------------------


@dataclass(frozen=True)
class Subgraph:
    """Edges of one rating category with their symmetric normalization coefficients.

    Node ids are global: users ``0..M-1``, items ``M..M+N-1``.
    """

    rating: int
    users: np.ndarray
    items: np.ndarray
    coeff: np.ndarray
    degree: np.ndarray
    adjacency: sp.csr_matrix

    @property
    def n_edges(self):
        return len(self.users)


@dataclass(frozen=True)
class RatingSubgraphs:
    n_users: int
    n_items: int
    graphs: tuple = field(default_factory=tuple)

    def __iter__(self):
        return iter(self.graphs)

    def __len__(self):
        return len(self.graphs)

    def __getitem__(self, i):
        return self.graphs[i]


def normalized_subgraph(rating, users, items, n_users, n_items) -> Subgraph:
    n = n_users + n_items
    users = np.asarray(users, dtype=np.int64)
    items = np.asarray(items, dtype=np.int64)
    degree = np.zeros(n, dtype=np.int64)
    np.add.at(degree, users, 1)
    np.add.at(degree, items + n_users, 1)
    coeff = 1.0 / np.sqrt(degree[users] * degree[items + n_users]) if len(users) else np.zeros(0)
    rows = np.concatenate([users, items + n_users])
    cols = np.concatenate([items + n_users, users])
    adjacency = sp.csr_matrix((np.concatenate([coeff, coeff]), (rows, cols)), shape=(n, n))
    return Subgraph(rating, users, items, coeff, degree, adjacency)


def build_subgraphs(dataset: RatingDataset) -> RatingSubgraphs:
    """One normalized bipartite subgraph per rating category, from the train split only."""
    train = dataset.train
    if len(train) == 0:
        raise ContractError("train split is empty")
    graphs = []
    for r in dataset.categories:
        sel = train.ratings == r
        graphs.append(normalized_subgraph(r, train.users[sel], train.items[sel], dataset.n_users, dataset.n_items))
    return RatingSubgraphs(dataset.n_users, dataset.n_items, tuple(graphs))


# cohorts --------------------------------------------------------------------------


@dataclass(frozen=True)
class CohortAssignment:
    labels: tuple
    counts: np.ndarray
    inactive_share: float = 0.80
    active_share: float = 0.05

    def members(self, cohort):
        return np.array([i for i, c in enumerate(self.labels) if c == cohort], dtype=np.int64)

    def sizes(self):
        return {c: sum(1 for x in self.labels if x == c) for c in COHORTS}


def assign_cohorts(dataset: RatingDataset, inactive_share=0.80, active_share=0.05) -> CohortAssignment:
    """Bottom 80% of users by train interactions are Inactive, the top 5% Active, the rest Normal.

    Users are ranked by (count, user id) ascending, so ties put the lower id on the inactive side.
    """
    if len(dataset.train) == 0:
        raise ContractError("train split is empty")
    m = dataset.n_users
    counts = np.bincount(dataset.train.users, minlength=m)
    order = np.lexsort((np.arange(m), counts))
    # rounding both cut points keeps every cohort within one user of its share
    n_inactive = int(math.floor(m * inactive_share + 0.5))
    n_active = int(math.floor(m * active_share + 0.5))
    labels = [NORMAL] * m
    for rank, user in enumerate(order):
        if rank < n_inactive:
            labels[user] = INACTIVE
        elif rank >= m - n_active:
            labels[user] = ACTIVE
    return CohortAssignment(tuple(labels), counts, inactive_share, active_share)


# prepared data directories --------------------------------------------------------


def write_remap(path, raw_ids):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for dense, raw in enumerate(raw_ids):
            fh.write(f"{raw}\t{dense}\n")


def read_remap(path) -> list:
    ids = []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, start=1):
            raw, dense = line.rstrip("\n").split("\t")
            if int(dense) != len(ids):
                raise ParseError(f"{path}:{lineno}: dense ids must be consecutive from 0")
            ids.append(raw)
    return ids


def _write_split(path, part: Split):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        for u, v, r in zip(part.users, part.items, part.ratings):
            fh.write(f"{u}\t{v}\t{r}\n")


def _read_split(path) -> Split:
    arr = np.loadtxt(path, dtype=np.int64, delimiter="\t", ndmin=2)
    if arr.size == 0:
        return Split.from_records([])
    return Split(arr[:, 0].copy(), arr[:, 1].copy(), arr[:, 2].copy())


def save_prepared(out_dir, dataset: RatingDataset, seed: int | None = None):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    for name in ("train", "val", "test"):
        _write_split(out / f"{name}.tsv", getattr(dataset, name))
    write_remap(out / "users.tsv", dataset.user_ids or range(dataset.n_users))
    write_remap(out / "items.tsv", dataset.item_ids or range(dataset.n_items))
    meta = {
        "n_users": dataset.n_users,
        "n_items": dataset.n_items,
        "categories": ",".join(str(c) for c in dataset.categories),
    }
    if seed is not None:
        meta["seed"] = seed
    (out / "meta.txt").write_text("".join(f"{k}={v}\n" for k, v in meta.items()), encoding="utf-8")


def load_prepared(data_dir) -> RatingDataset:
    root = Path(data_dir)
    if not (root / "meta.txt").is_file():
        raise ContractError(f"{root} is not a prepared data directory (meta.txt missing)")
    meta = dict(line.split("=", 1) for line in (root / "meta.txt").read_text().splitlines() if "=" in line)
    return RatingDataset(
        int(meta["n_users"]),
        int(meta["n_items"]),
        tuple(int(c) for c in meta["categories"].split(",")),
        _read_split(root / "train.tsv"),
        _read_split(root / "val.tsv"),
        _read_split(root / "test.tsv"),
        tuple(read_remap(root / "users.tsv")),
        tuple(read_remap(root / "items.tsv")),
    )
