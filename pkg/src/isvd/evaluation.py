"""Streaming experiments and their metrics.

A run initialises a truncated SVD on the first half of the data and inserts
the rest in ``phi`` batches, timing every update, then scores the final
factors:

* link prediction: the adjacency grows by node blocks, each applied as new
  rows then new columns; scored by average precision on held-out pairs.
* collaborative filtering: the user x item matrix grows by item columns;
  scored by MSE on held-out, item-mean-centred ratings.
* synthetic: a sparse matrix grows by columns; only the Frobenius drift.

Average precision here is the thresholded variant: the ``P`` best-scored
test pairs (``P`` = number of positives) are called positive and AP is the
fraction of them that are true edges. It is not the area under the PR curve.
"""

from __future__ import annotations

import json
import time
from dataclasses import asdict, dataclass, field

import numpy as np
import scipy.sparse as sp

from . import baselines, engine
from .baselines import DenseSvdTriple
from .engine import TruncatedSvdState, VariantConfig
from .exceptions import BadPlan
from .sparse_core import as_csc
from .timing import STEPS, StepTimer

TASKS = ("link_prediction", "collab_filtering", "synthetic")
METHODS = ("engine", "zha_simon", "dense_gkl", "dense_rpi")
SCORE_DIGITS = 10


@dataclass
class ExperimentPlan:
    task: str
    k: int
    phi: int
    variant: VariantConfig = field(default_factory=VariantConfig)
    method: str = "engine"
    seed: int = 0
    init_fraction: float = 0.5
    test_fraction: float = None   # 0.3 for link prediction, 0.2 for ratings

    def __post_init__(self):
        if self.task not in TASKS:
            raise BadPlan(f"task must be one of {TASKS}")
        if self.method not in METHODS:
            raise BadPlan(f"method must be one of {METHODS}")
        if self.k < 1 or self.phi < 1:
            raise BadPlan("k and phi must be >= 1")
        if not 0 < self.init_fraction <= 1:
            raise BadPlan("init_fraction must be in (0, 1]")
        if isinstance(self.variant, dict):
            self.variant = VariantConfig(**self.variant)
        if self.test_fraction is None:
            self.test_fraction = 0.3 if self.task == "link_prediction" else 0.2

    @classmethod
    def from_dict(cls, d):
        return cls(**d)


@dataclass
class MetricsReport:
    task: str
    method: str
    k: int
    phi: int
    n_updates: int
    runtime_total: float
    runtime_pre_svd: float
    runtime_svd: float
    runtime_post_svd: float
    frobenius_norm: float
    ap: float = None
    mse: float = None

    def to_json(self):
        return json.dumps(asdict(self), sort_keys=True)


def format_table(reports):
    cols = ("task", "method", "k", "phi", "runtime_total", "frobenius_norm", "ap", "mse")
    rows = [cols] + [tuple(_fmt(getattr(r, c)) for c in cols) for r in reports]
    widths = [max(len(r[i]) for r in rows) for i in range(len(cols))]
    return "\n".join("  ".join(v.rjust(w) for v, w in zip(r, widths)) for r in rows)


def _fmt(v):
    if v is None:
        return "-"
    if isinstance(v, float):
        return f"{v:.6g}"
    return str(v)


def factors(state):
    """Dense ``(U, sigma, V)`` of an engine state or a dense triple."""
    if isinstance(state, TruncatedSvdState):
        return state.left_vectors(), state.sigma, state.right_vectors()
    return state.U, state.sigma, state.V


# -- metrics -----------------------------------------------------------------

def _pair_scores(U, sigma, V, i, j):
    return np.einsum("ij,ij->i", U[i] * sigma, V[j])


def pair_scores(state, i, j, undirected=True):
    """``U[i] diag(sigma) V[j]``, maximised over both orientations if undirected.

    Indices outside the current factors score 0.
    """
    U, sigma, V = factors(state)
    i = np.asarray(i, dtype=np.int64)
    j = np.asarray(j, dtype=np.int64)
    out = np.zeros(i.size)
    ok = (i < U.shape[0]) & (j < V.shape[0])
    out[ok] = _pair_scores(U, sigma, V, i[ok], j[ok])
    if undirected:
        ok2 = (j < U.shape[0]) & (i < V.shape[0])
        rev = np.full(i.size, -np.inf)
        rev[ok2] = _pair_scores(U, sigma, V, j[ok2], i[ok2])
        out = np.where(ok | ok2, np.maximum(np.where(ok, out, -np.inf), rev), 0.0)
    return out


def average_precision(state, test_pairs, undirected=True, seed=0):
    """Fraction of true edges among the ``P`` best-scored test pairs.

    ``test_pairs`` is an ``(t, 3)`` array of ``(i, j, label)`` rows with label
    1 for an edge and 0 for a non-edge; ``P`` is the number of label-1 rows.
    Scores are rounded to ``SCORE_DIGITS`` significant digits of the largest
    magnitude, and ties are broken by a seeded random order, so rankings do
    not hinge on roundoff.
    """
    pairs = np.asarray(test_pairs)
    if pairs.ndim != 2 or pairs.shape[0] == 0:
        raise BadPlan("empty test set")
    labels = pairs[:, 2].astype(bool)
    P = int(labels.sum())
    if P == 0:
        raise BadPlan("test set has no positive pairs")
    scores = pair_scores(state, pairs[:, 0], pairs[:, 1], undirected)
    top = np.abs(scores).max()
    if top > 0:
        scores = np.round(scores / top * 10.0 ** SCORE_DIGITS)
    tiebreak = np.random.default_rng(seed).permutation(scores.size)
    order = np.lexsort((tiebreak, -scores))
    return float(labels[order[:P]].mean())


def mse(state, test_ratings):
    """Mean squared error of ``U[u] diag(sigma) V[i]`` against targets.

    ``test_ratings`` is ``(users, items, targets)`` with targets already
    centred. Users or items outside the factors predict 0 and still count.
    """
    u, i, y = (np.asarray(a) for a in test_ratings)
    if y.size == 0:
        raise BadPlan("empty test set")
    pred = pair_scores(state, u, i, undirected=False)
    return float(np.mean((pred - y) ** 2))


def frobenius_drift(state, A):
    """``||U diag(sigma) V^T - A||_F`` without forming the dense product.

    Uses ``||X - A||^2 = sum_nnz (x - a)^2 + (||X||^2 - sum_nnz x^2)`` with
    ``||X||^2 = ||sigma||^2``, which holds for orthonormal factors. Rows or
    columns of ``A`` beyond the factors count as plain ``A`` entries.
    """
    U, sigma, V = factors(state)
    A = as_csc(A).tocoo()
    inside = (A.row < U.shape[0]) & (A.col < V.shape[0])
    r, c, a = A.row[inside], A.col[inside], A.data[inside]
    x = _pair_scores(U, sigma, V, r, c)
    outside = float(np.sum(A.data[~inside] ** 2))
    total = np.sum((x - a) ** 2) + max(float(sigma @ sigma) - float(x @ x), 0.0) + outside
    return float(np.sqrt(total))


# -- data splits ---------------------------------------------------------------

def link_prediction_split(A, test_fraction=0.3, seed=0):
    """Hold out edges of a symmetric adjacency plus as many non-edges.

    Returns ``(A_train, pairs)`` where ``pairs`` rows are ``(i, j, label)``
    with ``i < j``.
    """
    rng = np.random.default_rng(seed)
    A = as_csc(A)
    n = A.shape[0]
    T = sp.triu(A, k=1).tocoo()
    n_test = int(round(test_fraction * T.nnz))
    pick = rng.permutation(T.nnz)[:n_test]
    pos = np.column_stack([T.row[pick], T.col[pick]])
    existing = set(zip(T.row.tolist(), T.col.tolist()))
    if n * (n - 1) // 2 - len(existing) < n_test:
        raise BadPlan("graph too dense to sample negatives")
    neg = set()
    while len(neg) < n_test:
        i, j = rng.integers(n, size=2)
        if i == j:
            continue
        i, j = (int(i), int(j)) if i < j else (int(j), int(i))
        if (i, j) not in existing:
            neg.add((i, j))
    neg = np.array(sorted(neg), dtype=np.int64).reshape(-1, 2)
    pairs = np.vstack([np.column_stack([pos, np.ones(n_test, dtype=np.int64)]),
                       np.column_stack([neg, np.zeros(len(neg), dtype=np.int64)])])
    mask = sp.csc_matrix((np.ones(2 * n_test), (np.r_[pos[:, 0], pos[:, 1]],
                                               np.r_[pos[:, 1], pos[:, 0]])), shape=A.shape)
    train = A - A.multiply(mask > 0)
    train.eliminate_zeros()
    return as_csc(train), pairs


def rating_split(users, items, ratings, shape, test_fraction=0.2, seed=0):
    """8:2-style split with item means from the training part only.

    Returns ``(A_train, test, item_means, global_mean)``: ``A_train`` holds
    centred training ratings; ``test`` is ``(users, items, targets)`` with
    targets centred by the training mean of their item, or by the global
    training mean for items without training ratings.
    """
    rng = np.random.default_rng(seed)
    users, items, ratings = (np.asarray(a) for a in (users, items, ratings))
    n_test = int(round(test_fraction * ratings.size))
    perm = rng.permutation(ratings.size)
    te, tr = perm[:n_test], perm[n_test:]
    counts = np.bincount(items[tr], minlength=shape[1])
    sums = np.bincount(items[tr], weights=ratings[tr], minlength=shape[1])
    global_mean = float(ratings[tr].mean()) if tr.size else 0.0
    means = np.where(counts > 0, sums / np.maximum(counts, 1), global_mean)
    A = sp.csc_matrix((ratings[tr] - means[items[tr]], (users[tr], items[tr])), shape=shape)
    test = (users[te], items[te], ratings[te] - means[items[te]])
    return as_csc(A), test, means, global_mean


# -- streaming ---------------------------------------------------------------

class _Runner:
    """Uniform driver over the engine and the dense baselines."""

    def __init__(self, plan: ExperimentPlan, timer: StepTimer):
        self.plan = plan
        self.timer = timer
        self.state = None
        v = plan.variant
        self._dense = {"zha_simon": {"mode": "exact"},
                       "dense_gkl": {"mode": "gkl", "l": v.l, "seed": v.seed},
                       "dense_rpi": {"mode": "rpi", "l": v.l, "t": v.t, "seed": v.seed},
                       }.get(plan.method)

    def init(self, A0):
        T = baselines.initial_svd(A0, self.plan.k, seed=self.plan.seed)
        self.state = T if self._dense is not None else engine.init(T.U, T.sigma, T.V)

    def add_rows(self, E):
        if self._dense is None:
            engine.add_rows(self.state, E, self.plan.variant, self.timer)
        else:
            self.state = baselines.zha_simon_add_rows(self.state, E, self.timer, **self._dense)

    def add_columns(self, E):
        if self._dense is None:
            engine.add_columns(self.state, E, self.plan.variant, self.timer)
        else:
            self.state = baselines.zha_simon_add_columns(self.state, E, self.timer,
                                                         **self._dense)


def _schedule(start, stop, phi):
    count = stop - start
    if count == 0:
        return []
    if phi > count:
        raise BadPlan(f"phi={phi} exceeds the {count} insertable rows/columns")
    edges = np.linspace(start, stop, phi + 1).round().astype(int)
    return list(zip(edges[:-1], edges[1:]))


def run_streaming(plan: ExperimentPlan, data) -> MetricsReport:
    """Run ``plan`` on ``data`` and report runtime and quality.

    ``data`` is the full symmetric adjacency for link prediction, a
    ``(users, items, ratings, shape)`` tuple for collaborative filtering and
    a sparse matrix for the synthetic task.
    """
    timer = StepTimer()
    runner = _Runner(plan, timer)
    ap = err = None
    if plan.task == "link_prediction":
        A = as_csc(data)
        if A.shape[0] != A.shape[1] or abs(A - A.T).max() > 0:
            raise BadPlan("link prediction needs a square symmetric adjacency")
        train, pairs = link_prediction_split(A, plan.test_fraction, plan.seed)
        n = A.shape[0]
        h = max(plan.k, int(round(plan.init_fraction * n)))
        runner.init(train[:h, :h])
        batches = _schedule(h, n, plan.phi)
        for a, b in batches:
            runner.add_rows(train[a:b, :a])
            runner.add_columns(train[:b, a:b])
        final = train
    elif plan.task == "collab_filtering":
        users, items, ratings, shape = data
        train, test, _, _ = rating_split(users, items, ratings, shape, plan.test_fraction,
                                         plan.seed)
        h = max(plan.k, int(round(plan.init_fraction * shape[1])))
        runner.init(train[:, :h])
        batches = _schedule(h, shape[1], plan.phi)
        for a, b in batches:
            runner.add_columns(train[:, a:b])
        final = train
    else:
        A = as_csc(data)
        h = max(plan.k, int(round(plan.init_fraction * A.shape[1])))
        runner.init(A[:, :h])
        batches = _schedule(h, A.shape[1], plan.phi)
        for a, b in batches:
            runner.add_columns(A[:, a:b])
        final = A
    state = runner.state
    if plan.task == "link_prediction":
        ap = average_precision(state, pairs, undirected=True, seed=plan.seed)
    elif plan.task == "collab_filtering":
        err = mse(state, test)
    n_updates = len(batches) * (2 if plan.task == "link_prediction" else 1)
    return MetricsReport(plan.task, plan.method, plan.k, plan.phi, n_updates, timer.total,
                         *(timer.totals[s] for s in STEPS),
                         frobenius_drift(state, final), ap=ap, mse=err)


def sweep(plan: ExperimentPlan, data, ks=(16, 32, 64, 128, 256), phis=(10, 100, 1000, 10000)):
    """Run ``plan`` over a grid of ``k`` and ``phi``; skips infeasible cells."""
    out = []
    for k in ks:
        for phi in phis:
            p = ExperimentPlan(**{**asdict(plan), "k": k, "phi": phi, "variant": plan.variant})
            try:
                out.append(run_streaming(p, data))
            except BadPlan:
                continue
    return out


def write_gnuplot(path, reports, x="phi", y="runtime_total"):
    """Whitespace-separated ``x y`` blocks, one per (method, k)."""
    groups = {}
    for r in reports:
        groups.setdefault((r.method, r.k), []).append(r)
    with open(path, "w") as fh:
        for (method, k), rs in sorted(groups.items()):
            fh.write(f"# method={method} k={k}\n")
            for r in sorted(rs, key=lambda r: getattr(r, x)):
                fh.write(f"{getattr(r, x)} {getattr(r, y)}\n")
            fh.write("\n\n")


# -- scaling -----------------------------------------------------------------

def _random_orthonormal(rng, m, k):
    Q, _ = np.linalg.qr(rng.standard_normal((m, k)))
    return Q


def _random_update(rng, m, s, nnz):
    nnz = max(1, min(nnz, m * s))
    flat = rng.choice(m * s, size=nnz, replace=False)
    r, c = np.divmod(flat, s)
    return as_csc(sp.csc_matrix((rng.standard_normal(nnz), (r, c)), shape=(m, s)))


def scaling_benchmark(sizes, density=None, s=10, k=16, variant=None, nnz=1000, n=1000,
                      reps=3, methods=("engine", "zha_simon"), seed=0, warmup=True):
    """Median add-columns time as the row count ``m`` grows.

    Each size starts from a random rank-``k`` state with ``n`` columns and
    appends an ``m x s`` update holding ``nnz`` nonzeros (or ``density * m * s``
    when ``density`` is given). Returns ``(rows, slopes)``: one row per
    ``(m, method)`` with the median of ``reps`` timings, and per method the
    least-squares slope of log(time) against log(m). With ``warmup`` each
    configuration runs once untimed first.
    """
    variant = variant or VariantConfig()
    rng = np.random.default_rng(seed)
    rows = []
    for m in sizes:
        U = _random_orthonormal(rng, m, k)
        V = _random_orthonormal(rng, n, k)
        sigma = np.sort(rng.uniform(1, 10, k))[::-1]
        e_nnz = int(round(density * m * s)) if density is not None else nnz
        E = _random_update(rng, m, s, e_nnz)
        for method in methods:
            times = []
            for rep in range(reps + int(warmup)):
                if method == "engine":
                    st = engine.init(U, sigma, V)
                    t0 = time.perf_counter()
                    engine.add_columns(st, E, variant)
                else:
                    T = DenseSvdTriple(U, sigma, V)
                    t0 = time.perf_counter()
                    baselines.zha_simon_add_columns(T, E)
                if rep >= int(warmup):
                    times.append(time.perf_counter() - t0)
            rows.append({"m": int(m), "method": method, "nnz": int(E.nnz),
                         "median_time": float(np.median(times))})
    slopes = {}
    for method in methods:
        pts = [(r["m"], r["median_time"]) for r in rows if r["method"] == method]
        if len(pts) > 1:
            x, y = np.log([p[0] for p in pts]), np.log([p[1] for p in pts])
            slopes[method] = float(np.polyfit(x, y, 1)[0])
        else:
            slopes[method] = 0.0
    return rows, slopes
