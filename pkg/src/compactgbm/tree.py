"""Histogram accumulation, split search and leaf-wise tree growth."""
from __future__ import annotations

import heapq
from dataclasses import dataclass

import numpy as np

from .binning import record_split_hit
from .columnar import Session
from .errors import ShapeMismatch, StaleBinning

EPS = 1e-10
# relative slack under which two gains count as tied
TIE_RTOL = 1e-12

HIST_DTYPE = np.dtype([("sum_g", "<f8"), ("sum_h", "<f8"), ("count", "<u4")])


class Histogram:
    """Per-bin (sum_g, sum_h, count) accumulators, 20 bytes per bin."""

    __slots__ = ("data", "_session")

    def __init__(self, n_bins: int, session: Session | None = None, data: np.ndarray | None = None):
        self.data = np.zeros(n_bins, dtype=HIST_DTYPE) if data is None else data
        self._session = session
        if session is not None:
            session.charge("histogram_bytes", self.data.nbytes)

    @property
    def n_bins(self) -> int:
        return self.data.shape[0]

    @property
    def sum_g(self) -> np.ndarray:
        return self.data["sum_g"]

    @property
    def sum_h(self) -> np.ndarray:
        return self.data["sum_h"]

    @property
    def count(self) -> np.ndarray:
        return self.data["count"]

    def totals(self) -> tuple[float, float, int]:
        return float(self.sum_g.sum()), float(self.sum_h.sum()), int(self.count.sum())

    def release(self) -> None:
        if self._session is not None:
            self._session.release("histogram_bytes", self.data.nbytes)
            self._session = None


def accumulate(bins: np.ndarray, n_bins: int, g: np.ndarray, h: np.ndarray,
               session: Session | None = None) -> Histogram:
    """Histogram of rows already mapped to ``bins`` with gradients ``g``, ``h``."""
    hist = Histogram(n_bins, session)
    if bins.shape[0]:
        hist.data["sum_g"] = np.bincount(bins, weights=g, minlength=n_bins)
        hist.data["sum_h"] = np.bincount(bins, weights=h, minlength=n_bins)
        hist.data["count"] = np.bincount(bins, minlength=n_bins)
    return hist


def build_histogram(rows: np.ndarray, binned, g: np.ndarray, h: np.ndarray,
                    session: Session | None = None) -> Histogram:
    if binned.stale:
        raise StaleBinning(f"feature {binned.feature_id} must be re-quantized first")
    return accumulate(binned.bins(rows), binned.n_bins, g[rows], h[rows], session)


def histogram_subtraction(parent: Histogram, child: Histogram,
                          session: Session | None = None) -> Histogram:
    if parent.n_bins != child.n_bins:
        raise ShapeMismatch(f"{parent.n_bins} bins vs {child.n_bins} bins")
    out = np.empty_like(parent.data)
    for name in HIST_DTYPE.names:
        out[name] = parent.data[name] - child.data[name]
    return Histogram(parent.n_bins, session, data=out)


def _guard(H):
    # epsilon only kicks in for (near-)zero hessian sums
    return np.where(H >= EPS, H, H + EPS) if isinstance(H, np.ndarray) else (H if H >= EPS else H + EPS)


def leaf_weight(G: float, H: float) -> float:
    """Newton step ``-G/H``; an empty leaf (G = H = 0) gets 0."""
    return -G / _guard(H)


def _score(G, H):
    return G * G / _guard(H)


@dataclass(frozen=True)
class SplitInfo:
    feature_id: int
    split_bin: int
    threshold: float
    gain: float
    left_stats: tuple[float, float, int]
    right_stats: tuple[float, float, int]
    missing_goes_left: bool = True


@dataclass(frozen=True)
class SplitConfig:
    min_data_in_leaf: int = 20
    min_split_gain: float = 0.0


def split_gains(hist: Histogram, missing_bin: int | None, parent: tuple[float, float, int],
                config: SplitConfig):
    """Gain of every candidate threshold of one feature (``-inf`` where invalid).

    Candidate ``j`` sends finite bins ``0..j`` plus the missing bin left.
    """
    n_finite = hist.n_bins - (missing_bin is not None)
    if n_finite < 2:
        empty = np.empty(0)
        return empty, empty, empty, np.empty(0, dtype=np.int64)
    G, H, n = parent
    g = hist.sum_g[:n_finite]
    h = hist.sum_h[:n_finite]
    c = hist.count[:n_finite].astype(np.int64)
    if missing_bin is not None:
        g0, h0, c0 = hist.sum_g[missing_bin], hist.sum_h[missing_bin], int(hist.count[missing_bin])
    else:
        g0 = h0 = 0.0
        c0 = 0
    GL = np.cumsum(g)[:-1] + g0
    HL = np.cumsum(h)[:-1] + h0
    CL = np.cumsum(c)[:-1] + c0
    GR, HR, CR = G - GL, H - HL, n - CL
    gain = 0.5 * (_score(GL, HL) + _score(GR, HR) - _score(G, H))
    ok = (CL >= config.min_data_in_leaf) & (CR >= config.min_data_in_leaf) & (gain > config.min_split_gain)
    return np.where(ok, gain, -np.inf), GL, HL, CL


def find_best_split(histograms: list[Histogram], parent: tuple[float, float, int],
                    config: SplitConfig, mappers=None) -> SplitInfo | None:
    """Best threshold over all features, or ``None`` if nothing qualifies.

    Gains within ``TIE_RTOL`` of the maximum are treated as ties and resolved
    toward the lowest feature, then the lowest bin. ``mappers`` supplies the
    raw thresholds and missing-bin positions; without it every bin is finite
    and the threshold is reported as the bin index.
    """
    per_feature = []
    best = -np.inf
    for f, hist in enumerate(histograms):
        mb = mappers[f].missing_bin if mappers is not None else None
        gains, GL, HL, CL = split_gains(hist, mb, parent, config)
        per_feature.append((gains, GL, HL, CL))
        if gains.shape[0]:
            best = max(best, float(gains.max()))
    if best == -np.inf:
        return None
    cutoff = best - TIE_RTOL * max(1.0, abs(best))
    G, H, n = parent
    for f, (gains, GL, HL, CL) in enumerate(per_feature):
        hits = np.flatnonzero(gains >= cutoff)
        if hits.shape[0]:
            j = int(hits[0])
            thr = float(mappers[f].boundaries[j]) if mappers is not None else float(j)
            left = (float(GL[j]), float(HL[j]), int(CL[j]))
            right = (G - left[0], H - left[1], n - left[2])
            return SplitInfo(f, j, thr, float(gains[j]), left, right)
    return None  # pragma: no cover


@dataclass
class Tree:
    """Flat node arrays; leaves have ``feature == -1``."""

    feature: np.ndarray
    threshold: np.ndarray
    left: np.ndarray
    right: np.ndarray
    value: np.ndarray

    @property
    def n_leaves(self) -> int:
        return int((self.feature < 0).sum())

    @classmethod
    def leaf(cls, value: float) -> "Tree":
        return cls(np.array([-1]), np.array([0.0]), np.array([-1]), np.array([-1]), np.array([value]))

    def apply(self, columns, n_rows: int) -> np.ndarray:
        """Node index reached by every row; ``columns[f]`` gives raw values of feature ``f``."""
        node = np.zeros(n_rows, dtype=np.int64)
        active = np.arange(n_rows)
        while active.shape[0]:
            cur = node[active]
            feat = self.feature[cur]
            inner = feat >= 0
            active, cur, feat = active[inner], cur[inner], feat[inner]
            if not active.shape[0]:
                break
            go_right = np.zeros(active.shape[0], dtype=bool)
            for f in np.unique(feat):
                sel = feat == f
                x = columns[int(f)][active[sel]]
                go_right[sel] = np.isfinite(x) & (x > self.threshold[cur[sel]])
            node[active] = np.where(go_right, self.right[cur], self.left[cur])
        return node

    def predict(self, columns, n_rows: int) -> np.ndarray:
        return self.value[self.apply(columns, n_rows)]


def predict_tree(tree: Tree, row) -> float:
    """Leaf value for one row; ``row[f]`` is the raw value of feature ``f``."""
    node = 0
    while tree.feature[node] >= 0:
        x = row[int(tree.feature[node])]
        node = tree.right[node] if np.isfinite(x) and x > tree.threshold[node] else tree.left[node]
    return float(tree.value[node])


class _Leaf:
    __slots__ = ("node", "rows", "stats", "hists", "split")

    def __init__(self, node, rows, stats, hists, split):
        self.node, self.rows, self.stats, self.hists, self.split = node, rows, stats, hists, split


def grow_tree(features, g: np.ndarray, h: np.ndarray, rows: np.ndarray,
              max_leaves: int = 31, config: SplitConfig = SplitConfig(),
              session: Session | None = None, record_hits: bool = True):
    """Best-first growth until ``max_leaves`` or no leaf has a qualifying split.

    ``features`` are binned views exposing ``bins(rows)``, ``n_bins``,
    ``mapper`` and ``stale``. Returns the tree and the final
    ``(leaf_node, rows)`` partition.
    """
    for feat in features:
        if feat.stale:
            raise StaleBinning(f"feature {feat.feature_id} must be re-quantized first")
    mappers = [feat.mapper for feat in features]
    nodes_feature, nodes_thr, nodes_left, nodes_right, nodes_value = [-1], [0.0], [-1], [-1], [0.0]
    live: list[Histogram] = []

    def hists_for(r):
        out = [accumulate(feat.bins(r), feat.n_bins, g[r], h[r], session) for feat in features]
        live.extend(out)
        return out

    def stats_of(r):
        return float(g[r].sum()), float(h[r].sum()), int(r.shape[0])

    def evaluate(leaf):
        if leaf.hists is None:
            return None
        return find_best_split(leaf.hists, leaf.stats, config, mappers)

    root_stats = stats_of(rows)
    root = _Leaf(0, rows, root_stats, hists_for(rows) if max_leaves > 1 else None, None)
    root.split = evaluate(root)
    heap: list = []
    finished: list[_Leaf] = []

    def push(leaf):
        if leaf.split is None:
            finished.append(leaf)
        else:
            heapq.heappush(heap, (-leaf.split.gain, leaf.node, leaf))

    push(root)
    n_leaves = 1
    while heap and n_leaves < max_leaves:
        _, _, leaf = heapq.heappop(heap)
        s = leaf.split
        feat = features[s.feature_id]
        b = feat.bins(leaf.rows)
        go_left = b <= s.split_bin
        mb = feat.mapper.missing_bin
        if mb is not None:
            go_left |= b == mb
        lrows, rrows = leaf.rows[go_left], leaf.rows[~go_left]
        assert lrows.shape[0] == s.left_stats[2] and rrows.shape[0] == s.right_stats[2]
        if record_hits:
            record_split_hit(feat.mapper, s.split_bin)

        li, ri = len(nodes_feature), len(nodes_feature) + 1
        nodes_feature[leaf.node] = s.feature_id
        nodes_thr[leaf.node] = s.threshold
        nodes_left[leaf.node], nodes_right[leaf.node] = li, ri
        nodes_feature += [-1, -1]
        nodes_thr += [0.0, 0.0]
        nodes_left += [-1, -1]
        nodes_right += [-1, -1]
        nodes_value += [0.0, 0.0]
        n_leaves += 1

        want_hists = n_leaves < max_leaves
        lh = rh = None
        if want_hists:
            small_is_left = lrows.shape[0] <= rrows.shape[0]
            small = hists_for(lrows if small_is_left else rrows)
            large = [histogram_subtraction(p, c, session) for p, c in zip(leaf.hists, small)]
            live.extend(large)
            lh, rh = (small, large) if small_is_left else (large, small)
        for hist in leaf.hists:
            hist.release()
        left = _Leaf(li, lrows, stats_of(lrows), lh, None)
        right = _Leaf(ri, rrows, stats_of(rrows), rh, None)
        left.split = evaluate(left)
        right.split = evaluate(right)
        push(left)
        push(right)

    leaves = finished + [item[2] for item in heap]
    for leaf in leaves:
        nodes_value[leaf.node] = leaf_weight(leaf.stats[0], leaf.stats[1])
    for hist in live:
        hist.release()
    tree = Tree(np.array(nodes_feature, dtype=np.int64), np.array(nodes_thr, dtype=np.float64),
                np.array(nodes_left, dtype=np.int64), np.array(nodes_right, dtype=np.int64),
                np.array(nodes_value, dtype=np.float64))
    partition = sorted(((leaf.node, leaf.rows) for leaf in leaves), key=lambda t: t[0])
    return tree, partition
