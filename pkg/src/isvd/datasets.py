"""Dataset loading, update-batch files and synthetic generators.

Relative dataset paths are resolved against ``$ISVD_DATA_DIR`` when that
variable is set and the path does not exist as given.

Batch file format: a first line ``#isvd-batch <kind>`` with ``kind`` one of
``add_rows``, ``add_columns``, ``update_weights``, followed by one
MatrixMarket coordinate payload (``E``), or two for ``update_weights``
(``D`` then ``E``). Each payload starts at its ``%%MatrixMarket`` banner.
"""

from __future__ import annotations

import io
import os
from dataclasses import dataclass
from pathlib import Path

import numpy as np
import scipy.io
import scipy.sparse as sp

from .engine import BATCH_KINDS, UpdateBatch
from .exceptions import DatasetError
from .sparse_core import as_csc, read_matrix_market

FORMATS = ("matrix_market", "edge_list_tsv", "ratings_csv")
NORMALIZATIONS = ("none", "item_mean_center")
DATA_DIR_ENV = "ISVD_DATA_DIR"
BATCH_MAGIC = "#isvd-batch"


@dataclass(frozen=True)
class DatasetSpec:
    format: str
    path: str
    undirected: bool = False
    normalization: str = "none"

    def __post_init__(self):
        if self.format not in FORMATS:
            raise DatasetError(f"unknown format {self.format!r}; expected one of {FORMATS}")
        if self.normalization not in NORMALIZATIONS:
            raise DatasetError(f"unknown normalization {self.normalization!r}")
        if self.undirected and self.format != "edge_list_tsv":
            raise DatasetError("undirected only applies to edge_list_tsv")
        if self.normalization != "none" and self.format != "ratings_csv":
            raise DatasetError("item_mean_center only applies to ratings_csv")


def resolve_path(path) -> Path:
    p = Path(path)
    base = os.environ.get(DATA_DIR_ENV)
    if not p.exists() and not p.is_absolute() and base:
        p = Path(base) / p
    if not p.is_file():
        raise DatasetError(f"cannot read {path}")
    return p


def _reindex(tokens):
    # sorted contiguous ids; numeric order when every token is an integer
    uniq = sorted(set(tokens))
    try:
        uniq = sorted(uniq, key=int)
    except ValueError:
        pass
    lookup = {t: i for i, t in enumerate(uniq)}
    return np.array([lookup[t] for t in tokens], dtype=np.int64), uniq


def _max_duplicates(rows, cols, vals, shape):
    # keep the largest value among duplicate coordinates
    if rows.size == 0:
        return sp.csc_matrix(shape)
    key = rows * shape[1] + cols
    order = np.lexsort((-vals, key))
    key, rows, cols, vals = key[order], rows[order], cols[order], vals[order]
    first = np.r_[True, key[1:] != key[:-1]]
    return sp.csc_matrix((vals[first], (rows[first], cols[first])), shape=shape)


def _parse_edges(path):
    src, dst, wts = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line or line.startswith(("#", "%")):
                continue
            parts = line.split()
            if len(parts) not in (2, 3):
                raise DatasetError(f"{path}:{lineno}: expected 'src dst [weight]'")
            try:
                w = float(parts[2]) if len(parts) == 3 else 1.0
            except ValueError:
                raise DatasetError(f"{path}:{lineno}: bad weight {parts[2]!r}") from None
            src.append(parts[0])
            dst.append(parts[1])
            wts.append(w)
    return src, dst, np.array(wts)


def _load_edges(path, undirected):
    src, dst, w = _parse_edges(path)
    ids, nodes = _reindex(src + dst)
    n = len(nodes)
    r, c = ids[: len(src)], ids[len(src):]
    if undirected:
        r, c, w = np.r_[r, c], np.r_[c, r], np.r_[w, w]
    return _max_duplicates(r, c, w, (n, n))


def _parse_ratings(path):
    users, items, vals = [], [], []
    with open(path) as fh:
        for lineno, line in enumerate(fh, 1):
            line = line.strip()
            if not line:
                continue
            parts = line.split(",")
            if lineno == 1 and not _is_number(parts[-1] if len(parts) < 3 else parts[2]):
                continue  # header
            if len(parts) < 3:
                raise DatasetError(f"{path}:{lineno}: expected 'user,item,rating[,...]'")
            if not _is_number(parts[2]):
                raise DatasetError(f"{path}:{lineno}: bad rating {parts[2]!r}")
            users.append(parts[0].strip())
            items.append(parts[1].strip())
            vals.append(float(parts[2]))
    return users, items, np.array(vals)


def _is_number(tok):
    try:
        float(tok)
    except ValueError:
        return False
    return True


def load_ratings(path):
    """Ratings file as ``(user_idx, item_idx, rating, shape)`` triples."""
    users, items, vals = _parse_ratings(path)
    u, ulabels = _reindex(users)
    i, ilabels = _reindex(items)
    return u, i, vals, (len(ulabels), len(ilabels))


def _item_mean_center(A):
    A = as_csc(A).copy()
    counts = np.diff(A.indptr)
    sums = np.add.reduceat(A.data, A.indptr[:-1]) if A.nnz else np.zeros(A.shape[1])
    means = np.where(counts > 0, sums / np.maximum(counts, 1), 0.0)
    A.data -= np.repeat(means, counts)
    return A


def load_dataset(spec: DatasetSpec) -> sp.csc_matrix:
    """Read the matrix described by ``spec`` as canonical CSC."""
    path = resolve_path(spec.path)
    if spec.format == "matrix_market":
        try:
            return read_matrix_market(path)
        except ValueError as exc:
            raise DatasetError(f"{path}: {exc}") from exc
    if spec.format == "edge_list_tsv":
        return as_csc(_load_edges(path, spec.undirected))
    u, i, vals, shape = load_ratings(path)
    A = as_csc(_max_duplicates(u, i, vals, shape))
    return _item_mean_center(A) if spec.normalization == "item_mean_center" else A


def write_edge_list(path, A):
    """Upper-triangle edge list of a symmetric 0/1 adjacency, tab-separated."""
    T = sp.triu(as_csc(A), k=0).tocoo()
    order = np.lexsort((T.col, T.row))
    with open(path, "w") as fh:
        for r, c in zip(T.row[order], T.col[order]):
            fh.write(f"{r}\t{c}\n")


def _mm_text(A):
    buf = io.BytesIO()
    scipy.io.mmwrite(buf, sp.coo_matrix(as_csc(A)), precision=17)
    return buf.getvalue().decode()


def dumps_batch(batch: UpdateBatch) -> str:
    parts = [f"{BATCH_MAGIC} {batch.kind}\n"]
    if batch.kind == "update_weights":
        parts.append(_mm_text(batch.d))
    parts.append(_mm_text(batch.e))
    return "".join(parts)


def write_batch(path, batch: UpdateBatch):
    from .persistence import atomic_write
    atomic_write(path, dumps_batch(batch).encode())


def loads_batch(text: str, source="<batch>") -> UpdateBatch:
    lines = text.splitlines(keepends=True)
    if not lines or not lines[0].startswith(BATCH_MAGIC):
        raise DatasetError(f"{source}:1: missing '{BATCH_MAGIC} <kind>' header")
    head = lines[0].split()
    if len(head) != 2 or head[1] not in BATCH_KINDS:
        raise DatasetError(f"{source}:1: batch kind must be one of {BATCH_KINDS}")
    kind = head[1]
    starts = [i for i, ln in enumerate(lines) if ln.startswith("%%MatrixMarket")]
    want = 2 if kind == "update_weights" else 1
    if len(starts) != want:
        raise DatasetError(f"{source}: {kind} needs {want} MatrixMarket payload(s), "
                           f"found {len(starts)}")
    mats = []
    for a, b in zip(starts, starts[1:] + [len(lines)]):
        chunk = "".join(lines[a:b]).encode()
        try:
            mats.append(as_csc(scipy.io.mmread(io.BytesIO(chunk))))
        except (ValueError, IndexError) as exc:
            raise DatasetError(f"{source}:{a + 1}: {exc}") from exc
    if kind == "update_weights":
        return UpdateBatch(kind, mats[1], mats[0])
    return UpdateBatch(kind, mats[0])


def read_batch(path) -> UpdateBatch:
    with open(path) as fh:
        return loads_batch(fh.read(), str(path))


def synthetic_graph(n_nodes, n_communities=8, p_in=0.05, p_out=0.002, seed=0):
    """Symmetric 0/1 adjacency of a stochastic block model without self-loops."""
    rng = np.random.default_rng(seed)
    labels = rng.integers(n_communities, size=n_nodes)
    iu, ju = np.triu_indices(n_nodes, k=1)
    p = np.where(labels[iu] == labels[ju], p_in, p_out)
    hit = rng.random(iu.size) < p
    r, c = iu[hit], ju[hit]
    A = sp.csc_matrix((np.ones(2 * r.size), (np.r_[r, c], np.r_[c, r])),
                      shape=(n_nodes, n_nodes))
    return as_csc(A)


def synthetic_ratings(n_users, n_items, rank=5, density=0.1, noise=0.1, seed=0):
    """Ratings in [1, 5] from a low-rank model, as ``(users, items, values)``."""
    rng = np.random.default_rng(seed)
    P = rng.standard_normal((n_users, rank))
    Q = rng.standard_normal((n_items, rank))
    nnz = max(1, int(round(density * n_users * n_items)))
    flat = rng.choice(n_users * n_items, size=nnz, replace=False)
    u, i = np.divmod(flat, n_items)
    raw = np.einsum("ij,ij->i", P[u], Q[i]) / np.sqrt(rank) + noise * rng.standard_normal(nnz)
    vals = np.clip(np.round(3.0 + raw), 1.0, 5.0)
    return u, i, vals


def random_sparse(m, n, density, seed=0):
    """Uniform random sparse matrix with standard-normal values (CSC)."""
    rng = np.random.default_rng(seed)
    A = sp.random(m, n, density=density, format="csc", random_state=rng,
                  data_rvs=rng.standard_normal)
    return as_csc(A)
