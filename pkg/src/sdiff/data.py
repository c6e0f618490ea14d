"""Implicit-feedback interaction data: loading, splitting, condition masking.

Input files are plain text with one interaction per line,
``user<sep>item[<sep>rating[<sep>timestamp]]`` where the separator is a tab
or a comma. Ratings and timestamps are ignored; every surviving (user, item)
pair becomes a single binary interaction. Dense indices are assigned in
first-appearance order.
"""
from __future__ import annotations

import hashlib
import logging
import math
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.sparse as sp

from .errors import DataFormatError
from .validation import as_generator, check_probability

log = logging.getLogger(__name__)

_SEPARATORS = {"tsv": "\t", "csv": ","}
_SPLIT_TAGS = ("train", "val", "test")


@dataclass(frozen=True)
class InteractionMatrix:
    """Sparse binary user-by-item matrix with ID maps and degree vectors.

    ``rows[u]`` holds the sorted dense item indices user ``u`` interacted
    with. All entries are implicit (value 1) and deduplicated. Instances are
    treated as immutable after construction.
    """

    n_users: int
    n_items: int
    rows: tuple[np.ndarray, ...]
    user_ids: tuple[str, ...]
    item_ids: tuple[str, ...]
    user_index: dict[str, int]
    item_index: dict[str, int]
    user_degrees: np.ndarray
    item_degrees: np.ndarray

    @property
    def nnz(self) -> int:
        return int(self.user_degrees.sum())

    def to_csr(self) -> sp.csr_matrix:
        indptr = np.zeros(self.n_users + 1, dtype=np.int64)
        np.cumsum([len(r) for r in self.rows], out=indptr[1:])
        indices = np.concatenate(self.rows) if self.nnz else np.empty(0, dtype=np.int64)
        data = np.ones(indices.shape[0], dtype=np.float64)
        return sp.csr_matrix((data, indices, indptr), shape=(self.n_users, self.n_items))

    def dense_row(self, u: int, dtype=np.float64) -> np.ndarray:
        x = np.zeros(self.n_items, dtype=dtype)
        x[self.rows[u]] = 1.0
        return x

    def content_hash(self) -> str:
        """Structural hash used to tie downstream artifacts to this data."""
        h = hashlib.sha256()
        h.update(b"SDIFFMAT")
        h.update(np.asarray([self.n_users, self.n_items], dtype="<u8").tobytes())
        h.update(np.asarray([len(r) for r in self.rows], dtype="<u8").tobytes())
        for r in self.rows:
            h.update(np.asarray(r, dtype="<u4").tobytes())
        return h.hexdigest()


def interactions_from_rows(
    rows,
    n_items: int | None = None,
    user_ids=None,
    item_ids=None,
) -> InteractionMatrix:
    """Build an :class:`InteractionMatrix` from per-user item-index iterables.

    Duplicates within a row are collapsed; indices are validated against
    ``n_items`` when given (otherwise inferred from the data).
    """
    clean = tuple(np.asarray(sorted(set(map(int, r))), dtype=np.int64) for r in rows)
    n_users = len(clean)
    max_item = max((int(r[-1]) for r in clean if r.size), default=-1)
    if n_items is None:
        n_items = max_item + 1
    elif max_item >= n_items:
        raise ValueError(f"item index {max_item} out of range for n_items={n_items}")
    user_ids = tuple(map(str, user_ids)) if user_ids is not None else tuple(str(u) for u in range(n_users))
    item_ids = tuple(map(str, item_ids)) if item_ids is not None else tuple(str(i) for i in range(n_items))
    if len(user_ids) != n_users or len(item_ids) != n_items:
        raise ValueError("ID list lengths do not match matrix dimensions")
    item_deg = np.zeros(n_items, dtype=np.float64)
    for r in clean:
        item_deg[r] += 1.0
    return InteractionMatrix(
        n_users=n_users,
        n_items=n_items,
        rows=clean,
        user_ids=user_ids,
        item_ids=item_ids,
        user_index={u: k for k, u in enumerate(user_ids)},
        item_index={i: k for k, i in enumerate(item_ids)},
        user_degrees=np.asarray([len(r) for r in clean], dtype=np.float64),
        item_degrees=item_deg,
    )


def _detect_separator(path: Path, fmt: str, first_line: str) -> str:
    if fmt in _SEPARATORS:
        return _SEPARATORS[fmt]
    if fmt != "auto":
        raise ValueError(f"unknown format {fmt!r}; expected tsv, csv, or auto")
    suffix = path.suffix.lower()
    if suffix in (".tsv", ".tab"):
        return "\t"
    if suffix == ".csv":
        return ","
    return "\t" if "\t" in first_line else ","


def _is_number(token: str) -> bool:
    try:
        float(token)
        return True
    except ValueError:
        return False


def load_interactions(path, fmt: str = "auto") -> InteractionMatrix:
    """Load a deduplicated binary interaction matrix from a delimited file.

    The first line is treated as a header and skipped when its first field is
    not numeric. Extra fields beyond user and item are ignored. Raises
    :class:`DataFormatError` for malformed records (with the line number) and
    when no interactions survive parsing.
    """
    path = Path(path)
    text = path.read_text()
    lines = text.splitlines()
    first_data = next((ln for ln in lines if ln.strip()), "")
    sep = _detect_separator(path, fmt, first_data)

    user_index: dict[str, int] = {}
    item_index: dict[str, int] = {}
    user_ids: list[str] = []
    item_ids: list[str] = []
    seen: list[set[int]] = []

    header_checked = False
    for lineno, line in enumerate(lines, start=1):
        line = line.strip()
        if not line:
            continue
        fields = [f.strip() for f in line.split(sep)]
        if not header_checked:
            header_checked = True
            if not _is_number(fields[0]):
                log.debug("skipping header line %d of %s", lineno, path)
                continue
        if len(fields) < 2 or not fields[0] or not fields[1]:
            raise DataFormatError(
                f"{path}:{lineno}: expected at least user and item fields separated by {sep!r}"
            )
        u_ext, i_ext = fields[0], fields[1]
        u = user_index.get(u_ext)
        if u is None:
            u = user_index[u_ext] = len(user_ids)
            user_ids.append(u_ext)
            seen.append(set())
        i = item_index.get(i_ext)
        if i is None:
            i = item_index[i_ext] = len(item_ids)
            item_ids.append(i_ext)
        seen[u].add(i)

    if not user_ids or not any(seen):
        raise DataFormatError(f"{path}: zero interactions after parsing")

    rows = tuple(np.asarray(sorted(s), dtype=np.int64) for s in seen)
    item_deg = np.zeros(len(item_ids), dtype=np.float64)
    for r in rows:
        item_deg[r] += 1.0
    m = InteractionMatrix(
        n_users=len(user_ids),
        n_items=len(item_ids),
        rows=rows,
        user_ids=tuple(user_ids),
        item_ids=tuple(item_ids),
        user_index=user_index,
        item_index=item_index,
        user_degrees=np.asarray([len(r) for r in rows], dtype=np.float64),
        item_degrees=item_deg,
    )
    log.info(
        "loaded %s: %d users, %d items, %d interactions",
        path.name, m.n_users, m.n_items, m.nnz,
    )
    return m


@dataclass(frozen=True)
class DatasetSplit:
    """Per-user disjoint train/val/test item-index sets."""

    train: tuple[np.ndarray, ...]
    val: tuple[np.ndarray, ...]
    test: tuple[np.ndarray, ...]
    seed: int
    matrix_hash: str

    @property
    def n_users(self) -> int:
        return len(self.train)

    def held_out(self, u: int, stage: str) -> np.ndarray:
        return self.val[u] if stage == "val" else self.test[u]

    def excluded(self, u: int, stage: str) -> np.ndarray:
        """Items removed from the candidate pool when evaluating ``stage``."""
        if stage == "val":
            return self.train[u]
        return np.concatenate([self.train[u], self.val[u]])


def _round_half_up(x: float) -> int:
    return int(math.floor(x + 0.5))


def split_dataset(m: InteractionMatrix, ratios=(0.7, 0.1, 0.2), seed: int = 0) -> DatasetSplit:
    """Uniform per-user random partition into train/val/test.

    Users with fewer than 3 interactions keep everything in train so the
    conditioning signal is never empty. Deterministic for a fixed seed.
    """
    ratios = tuple(float(r) for r in ratios)
    if len(ratios) != 3 or any(r <= 0 for r in ratios) or abs(sum(ratios) - 1.0) > 1e-9:
        raise ValueError(f"ratios must be three positive numbers summing to 1, got {ratios}")
    rng = np.random.default_rng(seed)
    train, val, test = [], [], []
    for r in m.rows:
        n = r.size
        if n < 3:
            train.append(r.copy())
            val.append(np.empty(0, dtype=np.int64))
            test.append(np.empty(0, dtype=np.int64))
            continue
        perm = rng.permutation(r)
        n_val = _round_half_up(ratios[1] * n)
        n_test = _round_half_up(ratios[2] * n)
        while n - n_val - n_test < 1:  # keep at least one train item
            if n_test > 0:
                n_test -= 1
            else:
                n_val -= 1
        test.append(np.sort(perm[:n_test]))
        val.append(np.sort(perm[n_test:n_test + n_val]))
        train.append(np.sort(perm[n_test + n_val:]))
    return DatasetSplit(
        train=tuple(train), val=tuple(val), test=tuple(test),
        seed=seed, matrix_hash=m.content_hash(),
    )


def mask_condition(x: np.ndarray, p_mask: float, rng) -> np.ndarray:
    """Independently zero each nonzero entry of ``x`` with probability ``p_mask``.

    Returns a new vector; the input is untouched and zeros stay zero.
    """
    check_probability(p_mask, "p_mask")
    rng = as_generator(rng)
    out = np.array(x, copy=True)
    nz = np.flatnonzero(out)
    if nz.size:
        drop = rng.random(nz.size) < p_mask
        out[nz[drop]] = 0
    return out


def write_split_manifest(split: DatasetSplit, path) -> None:
    """Write the split as ``user_idx item_idx split_tag`` triples."""
    with open(path, "w") as fh:
        for u in range(split.n_users):
            for tag, items in (("train", split.train[u]), ("val", split.val[u]), ("test", split.test[u])):
                for i in items:
                    fh.write(f"{u} {int(i)} {tag}\n")


def read_split_manifest(path, m: InteractionMatrix, seed: int = 0) -> DatasetSplit:
    """Load a split manifest and check it covers ``m`` exactly."""
    buckets = {tag: [set() for _ in range(m.n_users)] for tag in _SPLIT_TAGS}
    with open(path) as fh:
        for lineno, line in enumerate(fh, start=1):
            line = line.strip()
            if not line:
                continue
            parts = line.split()
            if len(parts) != 3 or parts[2] not in _SPLIT_TAGS:
                raise DataFormatError(f"{path}:{lineno}: expected 'user item tag' with tag in {_SPLIT_TAGS}")
            u, i, tag = int(parts[0]), int(parts[1]), parts[2]
            if not (0 <= u < m.n_users and 0 <= i < m.n_items):
                raise DataFormatError(f"{path}:{lineno}: index out of range")
            buckets[tag][u].add(i)
    for u in range(m.n_users):
        union = buckets["train"][u] | buckets["val"][u] | buckets["test"][u]
        if union != set(m.rows[u].tolist()):
            raise DataFormatError(f"split manifest does not cover user {u}'s interactions")
    as_arrays = lambda sets: tuple(np.asarray(sorted(s), dtype=np.int64) for s in sets)
    return DatasetSplit(
        train=as_arrays(buckets["train"]),
        val=as_arrays(buckets["val"]),
        test=as_arrays(buckets["test"]),
        seed=seed,
        matrix_hash=m.content_hash(),
    )
