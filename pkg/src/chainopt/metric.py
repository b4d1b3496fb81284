"""Finite pseudo-metric spaces and epsilon-cover construction.

A space is a set of points 0..n-1 together with a pseudo-metric, given
either as an explicit distance matrix or as coordinate vectors with a
named rule (Euclidean here; kernel-induced canonical distances are built
by :mod:`chainopt.gp`, which hands the resulting matrix to this module).

Covers come in three flavours:

* ``greedy_cover`` - the quadratic heuristic that repeatedly grabs the
  point whose epsilon-ball covers the most remaining points;
* ``brute_force_min_cover`` - an exhaustive minimum-cardinality oracle,
  capped at 20 points, intended for tests;
* ``sample_cover_compact`` - reduction from a compact domain to the
  finite case by i.i.d. uniform sampling.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass
from typing import Callable, Iterable, Sequence

import numpy as np
from scipy.spatial.distance import cdist

from .errors import ArgumentError, CapacityError, ParseError

DENSE_LIMIT = 8192           # precompute the full distance matrix up to this size
_TRIANGLE_FULL_LIMIT = 64    # exhaustive triangle check below, sampled above
_TRIANGLE_SAMPLES = 10_000
_SYMMETRY_RTOL = 1e-12
_TRIANGLE_SLACK = 1e-9       # relative slack for floating-point distances


class FiniteMetricSpace:
    """Points ``0..n-1`` with a pseudo-metric and a cached diameter.

    Construct through :meth:`from_coordinates` or
    :meth:`from_distance_matrix`.  Construction validates the pseudo-metric
    axioms: zero diagonal, symmetry, nonnegativity and the triangle
    inequality (exhaustive for n <= 64, on 10 000 random triples beyond).
    Instances are immutable once built and safe for concurrent readers.
    """

    def __init__(self, *, coords: np.ndarray | None, matrix: np.ndarray | None,
                 rule: str, validate: bool = True):
        if coords is None and matrix is None:
            raise ArgumentError("need coordinates or a distance matrix")
        self._coords = None if coords is None else np.asarray(coords, dtype=float)
        if self._coords is not None and self._coords.ndim == 1:
            self._coords = self._coords[:, None]
        self._rule = rule
        n = matrix.shape[0] if matrix is not None else self._coords.shape[0]
        if n < 1:
            raise ArgumentError("space must contain at least one point")
        self.n = int(n)
        if matrix is not None:
            matrix = np.asarray(matrix, dtype=float)
            if matrix.shape != (n, n):
                raise ArgumentError(f"distance matrix must be square, got {matrix.shape}")
            self._dist = matrix
        elif self.n <= DENSE_LIMIT:
            self._dist = cdist(self._coords, self._coords)
        else:
            self._dist = None  # rows computed on the fly from coordinates
        if validate:
            self._validate()
        self._diameter = self._compute_diameter()

    # -- constructors ------------------------------------------------------

    @classmethod
    def from_coordinates(cls, coords, rule: str = "euclidean") -> "FiniteMetricSpace":
        """Build a space from coordinate vectors with the Euclidean metric."""
        if rule != "euclidean":
            raise ArgumentError(f"unknown coordinate metric rule: {rule!r}")
        return cls(coords=np.asarray(coords, dtype=float), matrix=None, rule=rule)

    @classmethod
    def from_distance_matrix(cls, matrix, coords=None, rule: str = "matrix") -> "FiniteMetricSpace":
        """Build a space from an explicit n-by-n distance matrix.

        ``coords`` may carry the underlying coordinates (needed by kernel
        machinery) even though distances come from the matrix.
        """
        return cls(coords=coords, matrix=np.asarray(matrix, dtype=float), rule=rule)

    # -- geometry ----------------------------------------------------------

    @property
    def rule(self) -> str:
        return self._rule

    @property
    def coords(self) -> np.ndarray | None:
        return self._coords

    @property
    def diameter(self) -> float:
        return self._diameter

    def row(self, i: int) -> np.ndarray:
        """Distances from point ``i`` to every point."""
        self._check_id(i)
        if self._dist is not None:
            return self._dist[i]
        d = self._coords - self._coords[i]
        return np.sqrt(np.einsum("ij,ij->i", d, d))

    def distance(self, i: int, j: int) -> float:
        """Pseudo-metric distance ``d(i, j)``."""
        self._check_id(i)
        self._check_id(j)
        if self._dist is not None:
            return float(self._dist[i, j])
        return float(np.linalg.norm(self._coords[i] - self._coords[j]))

    def pairwise(self, ids: Sequence[int] | np.ndarray) -> np.ndarray:
        """Distance matrix restricted to the given point ids."""
        ids = np.asarray(ids, dtype=int)
        if ids.size and (ids.min() < 0 or ids.max() >= self.n):
            raise ArgumentError("point id out of range")
        if self._dist is not None:
            return self._dist[np.ix_(ids, ids)]
        pts = self._coords[ids]
        return cdist(pts, pts)

    def _check_id(self, i) -> None:
        if not (isinstance(i, (int, np.integer)) and 0 <= i < self.n):
            raise ArgumentError(f"point id {i!r} out of range for n={self.n}")

    # -- validation --------------------------------------------------------

    def _validate(self) -> None:
        if self._dist is not None:
            d = self._dist
            if np.any(np.abs(np.diag(d)) > 0):
                raise ArgumentError("d(i,i) must be zero for every point")
            scale = max(np.abs(d).max(), 1.0)
            if not np.allclose(d, d.T, rtol=_SYMMETRY_RTOL, atol=_SYMMETRY_RTOL * scale):
                raise ArgumentError("distance matrix is not symmetric")
            self._dist = 0.5 * (d + d.T)  # make symmetry exact after tolerance check
            if np.any(self._dist < 0):
                raise ArgumentError("distances must be nonnegative")
        self._validate_triangle()

    def _validate_triangle(self) -> None:
        n = self.n
        if n <= 2:
            return
        slack = _TRIANGLE_SLACK * max(self._max_distance_estimate(), 1.0)
        if n <= _TRIANGLE_FULL_LIMIT:
            d = self._dist if self._dist is not None else cdist(self._coords, self._coords)
            lhs = d[:, None, :]                       # d(i,k)
            rhs = d[:, :, None] + d[None, :, :]       # d(i,j)+d(j,k)
            if np.any(lhs > rhs + slack):
                raise ArgumentError("triangle inequality violated")
        else:
            rng = np.random.default_rng(0)
            trips = rng.integers(0, n, size=(_TRIANGLE_SAMPLES, 3))
            for i, j, k in trips:
                if self.distance(i, k) > self.distance(i, j) + self.distance(j, k) + slack:
                    raise ArgumentError(f"triangle inequality violated on ({i},{j},{k})")

    def _max_distance_estimate(self) -> float:
        if self._dist is not None:
            return float(self._dist.max())
        lo, hi = self._coords.min(axis=0), self._coords.max(axis=0)
        return float(np.linalg.norm(hi - lo))

    def _compute_diameter(self) -> float:
        if self._dist is not None:
            return float(self._dist.max())
        best = 0.0
        for i in range(self.n):
            best = max(best, float(self.row(i).max()))
        return best


@dataclass(frozen=True)
class CoverResult:
    """An epsilon-cover: centers in selection order plus the assignment map.

    ``covered_map[p]`` is the id of a center within ``radius`` of point
    ``p``, for every point the cover was asked to cover.
    """

    centers: tuple[int, ...]
    radius: float
    covered_map: dict[int, int]

    def __len__(self) -> int:
        return len(self.centers)


def distance(space: FiniteMetricSpace, i: int, j: int) -> float:
    """Distance between two points of the space."""
    return space.distance(i, j)


def greedy_cover(space: FiniteMetricSpace, epsilon: float,
                 subset: Iterable[int] | None = None) -> CoverResult:
    """Greedy epsilon-cover of ``subset`` (default: the whole space).

    Repeatedly selects the point whose closed epsilon-ball intersects the
    most not-yet-covered points, then removes that ball.  Ties break toward
    the smallest point id, which makes the construction deterministic.
    Candidates are restricted to the not-yet-covered points themselves, so
    the result is both a cover and (strictly) epsilon-separated.
    """
    if epsilon <= 0:
        raise ArgumentError("epsilon must be positive")
    if subset is None:
        ids = np.arange(space.n)
    else:
        ids = np.unique(np.asarray(list(subset), dtype=int))
    if ids.size == 0:
        raise ArgumentError("subset must be non-empty")
    if ids.min() < 0 or ids.max() >= space.n:
        raise ArgumentError("subset contains out-of-range point ids")

    m = ids.size
    ball = space.pairwise(ids) <= epsilon
    alive = np.ones(m, dtype=bool)
    counts = ball.sum(axis=1).astype(np.int64)
    assigned = np.full(m, -1, dtype=np.int64)
    centers: list[int] = []
    remaining = m
    while remaining > 0:
        masked = np.where(alive, counts, -1)
        best = int(np.argmax(masked))          # first maximum = smallest id
        if counts[best] == 1:
            # Every remaining ball is a singleton; flush in id order at once.
            for k in np.flatnonzero(alive):
                centers.append(int(ids[k]))
                assigned[k] = ids[k]
            break
        members = np.flatnonzero(alive & ball[best])
        centers.append(int(ids[best]))
        assigned[members] = ids[best]
        alive[members] = False
        counts = counts - ball[:, members].sum(axis=1)
        remaining -= members.size
    covered_map = {int(ids[k]): int(assigned[k]) for k in range(m)}
    return CoverResult(tuple(centers), float(epsilon), covered_map)


def brute_force_min_cover(space: FiniteMetricSpace, epsilon: float) -> CoverResult:
    """Exhaustive minimum-cardinality epsilon-cover (test oracle, n <= 20).

    Searches subsets in increasing size and lexicographic order, so the
    returned cover is deterministic; its cardinality is the covering number
    of the space at radius epsilon.
    """
    if epsilon <= 0:
        raise ArgumentError("epsilon must be positive")
    n = space.n
    if n > 20:
        raise CapacityError(f"brute-force cover limited to 20 points, got {n}")
    ball = space.pairwise(np.arange(n)) <= epsilon
    masks = [int(sum(1 << j for j in np.flatnonzero(ball[i]))) for i in range(n)]
    full = (1 << n) - 1
    for k in range(1, n + 1):
        for combo in itertools.combinations(range(n), k):
            acc = 0
            for c in combo:
                acc |= masks[c]
                if acc == full:
                    break
            if acc == full:
                covered_map = {}
                for p in range(n):
                    for c in combo:
                        if ball[c, p]:
                            covered_map[p] = c
                            break
                return CoverResult(tuple(combo), float(epsilon), covered_map)
    raise ArgumentError("unreachable: every point covers itself")  # pragma: no cover


def metric_entropy(space: FiniteMetricSpace, epsilon: float, mode: str = "exact") -> float:
    """Log covering number at radius epsilon: exact oracle or greedy estimate.

    The greedy estimate is an upper bound on the exact value.
    """
    if mode == "exact":
        return math.log(len(brute_force_min_cover(space, epsilon)))
    if mode == "greedy":
        return math.log(len(greedy_cover(space, epsilon)))
    raise ArgumentError(f"mode must be 'exact' or 'greedy', got {mode!r}")


def sample_cover_compact(sampler: Callable[[int], np.ndarray], epsilon: float,
                         m_estimate: int, u: float) -> tuple[FiniteMetricSpace, CoverResult]:
    """Cover a compact domain by uniform sampling plus a greedy pass.

    Draws ``n = ceil(m (log m + u))`` i.i.d. points through ``sampler`` and
    greedily covers the cloud at radius ``epsilon/2``.  With probability at
    least ``1 - exp(-u)`` the cloud is an ``epsilon/2``-net of the domain
    (``m_estimate`` must dominate the covering number at ``epsilon/4``), in
    which case the returned centers form an epsilon-net of the domain.

    Returns the sampled cloud as a space together with the cover; center
    ids index into the cloud.
    """
    if m_estimate < 1:
        raise ArgumentError("m_estimate must be at least 1")
    if epsilon <= 0:
        raise ArgumentError("epsilon must be positive")
    n_draw = math.ceil(m_estimate * (math.log(m_estimate) + u))
    pts = np.asarray(sampler(n_draw), dtype=float)
    if pts.ndim == 1:
        pts = pts[:, None]
    if pts.shape[0] != n_draw:
        raise ArgumentError(f"sampler returned {pts.shape[0]} points, expected {n_draw}")
    cloud = FiniteMetricSpace.from_coordinates(pts)
    half = greedy_cover(cloud, epsilon / 2.0)
    return cloud, CoverResult(half.centers, float(epsilon), half.covered_map)


def is_cover(space: FiniteMetricSpace, centers: Sequence[int], epsilon: float,
             subset: Iterable[int] | None = None) -> bool:
    """Exhaustively check that every subset point is within epsilon of a center."""
    ids = np.arange(space.n) if subset is None else np.asarray(list(subset), dtype=int)
    centers = list(centers)
    if not centers:
        return ids.size == 0
    for p in ids:
        if min(space.distance(int(p), c) for c in centers) > epsilon:
            return False
    return True


# -- file formats ------------------------------------------------------------

def load_point_cloud(path: str) -> np.ndarray:
    """Read a point cloud file: header ``# dim=<D>`` then one point per line."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh]
    if not lines or not lines[0].startswith("#"):
        raise ParseError("point cloud file must start with a '# dim=<D>' header", line=1)
    header = lines[0].lstrip("#").strip()
    if not header.startswith("dim="):
        raise ParseError("header must have the form '# dim=<D>'", line=1)
    try:
        dim = int(header[4:])
    except ValueError as exc:
        raise ParseError(f"bad dimension in header: {header!r}", line=1) from exc
    rows = []
    for num, ln in enumerate(lines[1:], start=2):
        if not ln:
            continue
        parts = ln.split()
        if len(parts) != dim:
            raise ParseError(f"expected {dim} coordinates, got {len(parts)}", line=num)
        try:
            rows.append([float(p) for p in parts])
        except ValueError as exc:
            raise ParseError(f"bad coordinate in {ln!r}", line=num) from exc
    if not rows:
        raise ParseError("point cloud file contains no points")
    return np.asarray(rows, dtype=float)


def load_distance_matrix(path: str) -> np.ndarray:
    """Read a distance matrix file: first line ``n``, then n rows of n reals."""
    with open(path, "r", encoding="utf-8") as fh:
        lines = [ln.strip() for ln in fh if ln.strip()]
    if not lines:
        raise ParseError("empty distance matrix file")
    try:
        n = int(lines[0])
    except ValueError as exc:
        raise ParseError(f"first line must be the point count, got {lines[0]!r}",
                         line=1) from exc
    if len(lines) - 1 != n:
        raise ParseError(f"expected {n} matrix rows, found {len(lines) - 1}")
    rows = []
    for num, ln in enumerate(lines[1:], start=2):
        parts = ln.split()
        if len(parts) != n:
            raise ParseError(f"expected {n} entries, got {len(parts)}", line=num)
        rows.append([float(p) for p in parts])
    return np.asarray(rows, dtype=float)


def load_space(path: str) -> FiniteMetricSpace:
    """Load a space from either supported file format (auto-detected)."""
    with open(path, "r", encoding="utf-8") as fh:
        first = fh.readline()
    if first.lstrip().startswith("#"):
        return FiniteMetricSpace.from_coordinates(load_point_cloud(path))
    return FiniteMetricSpace.from_distance_matrix(load_distance_matrix(path))


def write_cover_csv(cover: CoverResult, path: str) -> None:
    """Write a cover as CSV with columns ``center_id,order``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("center_id,order\n")
        for order, cid in enumerate(cover.centers):
            fh.write(f"{cid},{order}\n")
