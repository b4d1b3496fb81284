"""Gaussian process machinery: kernels, sampling, posteriors, information gain.

Posterior inference follows the standard noisy-observation form

    mu(x)     = k(x, X) (K + eta2 I)^{-1} Y
    sigma2(x) = k(x, x) - k(x, X) (K + eta2 I)^{-1} k(X, x)

computed through a lower-triangular factorization with escalating jitter.
Also provides the squared-Gaussian confidence intervals used by the
squared-process optimizer, together with their exact tail probability as
an erf-based oracle for tests.
"""

from __future__ import annotations

import itertools
import math
from dataclasses import dataclass, replace

import numpy as np
from scipy.linalg import solve_triangular
from scipy.spatial.distance import cdist

from .errors import ArgumentError, CapacityError, NumericError
from .metric import FiniteMetricSpace

_JITTER_START = 1e-10
_JITTER_LIMIT = 1e-6
_REBUILD_EVERY = 64       # full refactorization cadence for incremental updates
_VAR_CLAMP_TOL = 1e-10

_MATERN_P = {"matern12": 0.5, "matern32": 1.5, "matern52": 2.5}


@dataclass(frozen=True)
class Kernel:
    """Stationary or linear covariance with lengthscale and variance scale.

    Families: ``se`` (squared exponential), ``matern12``/``matern32``/
    ``matern52`` (``ou`` is accepted as an alias of ``matern12``), and
    ``linear``.  The Matern forms use the closed expressions
    ``h_p(sqrt(2p) r) exp(-sqrt(2p) r)`` with h constant, affine or
    quadratic for p = 1/2, 3/2, 5/2.
    """

    family: str
    lengthscale: float = 1.0
    variance: float = 1.0

    def __post_init__(self):
        fam = self.family
        if fam == "ou":
            object.__setattr__(self, "family", "matern12")
        elif fam not in ("se", "linear") and fam not in _MATERN_P:
            raise ArgumentError(f"unknown kernel family {fam!r}")
        if self.lengthscale <= 0:
            raise ArgumentError("lengthscale must be positive")
        if self.variance <= 0:
            raise ArgumentError("variance scale must be positive")


def parse_kernel(spec: str) -> Kernel:
    """Parse a kernel spec string such as ``se:ls=1.0`` or ``linear``."""
    spec = spec.strip()
    if not spec:
        raise ArgumentError("empty kernel spec")
    head, _, rest = spec.partition(":")
    kwargs: dict[str, float] = {}
    if rest:
        for item in rest.split(","):
            key, _, val = item.partition("=")
            key = key.strip()
            if key not in ("ls", "var"):
                raise ArgumentError(f"unknown kernel option {key!r} in {spec!r}")
            try:
                kwargs["lengthscale" if key == "ls" else "variance"] = float(val)
            except ValueError as exc:
                raise ArgumentError(f"bad numeric value in kernel spec {spec!r}") from exc
    return Kernel(head, **kwargs)


def kernel_spec(kernel: Kernel) -> str:
    """Inverse of :func:`parse_kernel` (canonical family names)."""
    out = f"{kernel.family}:ls={kernel.lengthscale:g}"
    if kernel.variance != 1.0:
        out += f",var={kernel.variance:g}"
    return out


def _as_points(X) -> np.ndarray:
    """Coerce to an (n, D) coordinate array; 1-D input means n scalar points."""
    X = np.asarray(X, dtype=float)
    if X.ndim == 1:
        return X[:, None]
    if X.ndim != 2:
        raise ArgumentError(f"coordinates must be 1-D or 2-D, got shape {X.shape}")
    return X


def _scaled_dist(kernel: Kernel, r: np.ndarray) -> np.ndarray:
    r = r / kernel.lengthscale
    if kernel.family == "se":
        return kernel.variance * np.exp(-0.5 * r * r)
    p = _MATERN_P[kernel.family]
    d = math.sqrt(2.0 * p) * r
    if kernel.family == "matern12":
        h = 1.0
    elif kernel.family == "matern32":
        h = 1.0 + d
    else:
        h = 1.0 + d + d * d / 3.0
    return kernel.variance * h * np.exp(-d)


def kernel_eval(kernel: Kernel, x, y) -> float:
    """Covariance value k(x, y) for coordinate vectors of matching dimension."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    y = np.atleast_1d(np.asarray(y, dtype=float))
    if x.shape != y.shape:
        raise ArgumentError(f"dimension mismatch: {x.shape} vs {y.shape}")
    if kernel.family == "linear":
        return float(kernel.variance * (x @ y))
    return float(_scaled_dist(kernel, np.linalg.norm(x - y)))


def gram(kernel: Kernel, X) -> np.ndarray:
    """Covariance matrix over a coordinate array of shape (n, D)."""
    X = _as_points(X)
    if kernel.family == "linear":
        return kernel.variance * (X @ X.T)
    return _scaled_dist(kernel, cdist(X, X))


def cross_gram(kernel: Kernel, X, Z) -> np.ndarray:
    """Covariance matrix between two coordinate arrays."""
    X = _as_points(X)
    Z = _as_points(Z)
    if kernel.family == "linear":
        return kernel.variance * (X @ Z.T)
    return _scaled_dist(kernel, cdist(X, Z))


def canonical_metric_space(kernel: Kernel, coords) -> FiniteMetricSpace:
    """Space whose metric is the process distance sqrt(k(x,x) - 2k(x,y) + k(y,y))."""
    coords = _as_points(coords)
    K = gram(kernel, coords)
    diag = np.diag(K)
    d2 = np.maximum(diag[:, None] + diag[None, :] - 2.0 * K, 0.0)
    D = np.sqrt(d2)
    return FiniteMetricSpace.from_distance_matrix(
        D, coords=coords, rule=f"canonical:{kernel.family}")


def chol_with_jitter(M: np.ndarray, start: float = _JITTER_START,
                     limit: float = _JITTER_LIMIT) -> np.ndarray:
    """Lower-triangular factor of M, escalating diagonal jitter on failure."""
    try:
        return np.linalg.cholesky(M)
    except np.linalg.LinAlgError:
        pass
    jitter = start
    eye = np.eye(M.shape[0])
    while jitter <= limit * (1 + 1e-12):
        try:
            return np.linalg.cholesky(M + jitter * eye)
        except np.linalg.LinAlgError:
            jitter *= 10.0
    raise NumericError(f"factorization failed even with jitter {limit:g}")


def sample_prior(kernel: Kernel, coords, seed) -> np.ndarray:
    """One centered prior draw over the coordinate set; deterministic per seed."""
    coords = _as_points(coords)
    K = gram(kernel, coords)
    L = chol_with_jitter(K)
    rng = np.random.default_rng(seed)
    return L @ rng.standard_normal(K.shape[0])


@dataclass(frozen=True)
class GPPosterior:
    """Immutable posterior state; updates return new values.

    ``L`` is the lower-triangular factor of K + eta2 I over the observed
    inputs and ``b = L^{-1} Y``; both are rebuilt from scratch every
    ``_REBUILD_EVERY`` updates to cap round-off drift.
    """

    kernel: Kernel
    eta2: float
    X: np.ndarray          # (t, D) observed inputs
    Y: np.ndarray          # (t,)  observed outputs
    L: np.ndarray          # (t, t) lower-triangular factor of K + eta2 I
    b: np.ndarray          # (t,)  L^{-1} Y
    updates_since_rebuild: int = 0

    @classmethod
    def empty(cls, kernel: Kernel, eta2: float, dim: int = 1) -> "GPPosterior":
        if eta2 <= 0:
            raise ArgumentError("noise variance must be positive")
        z = np.zeros((0, dim))
        return cls(kernel, float(eta2), z, np.zeros(0), np.zeros((0, 0)), np.zeros(0))

    @property
    def n_obs(self) -> int:
        return self.X.shape[0]


def posterior_predict(post: GPPosterior, x) -> tuple[float, float]:
    """Posterior mean and standard deviation at a single point."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    kxx = kernel_eval(post.kernel, x, x)
    if post.n_obs == 0:
        return 0.0, math.sqrt(max(kxx, 0.0))
    kvec = cross_gram(post.kernel, post.X, x[None, :])[:, 0]
    v = solve_triangular(post.L, kvec, lower=True)
    mu = float(v @ post.b)
    var = kxx - float(v @ v)
    if var < -_VAR_CLAMP_TOL * max(kxx, 1.0):
        raise NumericError(f"negative posterior variance {var:g}")
    return mu, math.sqrt(max(var, 0.0))


def posterior_predict_many(post: GPPosterior, Xq) -> tuple[np.ndarray, np.ndarray]:
    """Vectorized posterior mean and deviation over query rows."""
    Xq = _as_points(Xq)
    diag = np.array([kernel_eval(post.kernel, r, r) for r in Xq])
    if post.n_obs == 0:
        return np.zeros(Xq.shape[0]), np.sqrt(np.maximum(diag, 0.0))
    Kq = cross_gram(post.kernel, post.X, Xq)
    V = solve_triangular(post.L, Kq, lower=True)
    mu = V.T @ post.b
    var = np.maximum(diag - np.einsum("ij,ij->j", V, V), 0.0)
    return mu, np.sqrt(var)


def _rebuild(post: GPPosterior) -> GPPosterior:
    K = gram(post.kernel, post.X)
    try:
        L = np.linalg.cholesky(K + post.eta2 * np.eye(post.n_obs))
    except np.linalg.LinAlgError as exc:
        raise NumericError("posterior refactorization failed") from exc
    b = solve_triangular(L, post.Y, lower=True)
    return replace(post, L=L, b=b, updates_since_rebuild=0)


def posterior_update(post: GPPosterior, x, y: float) -> GPPosterior:
    """Posterior with one observation appended (rank-one factor extension)."""
    x = np.atleast_1d(np.asarray(x, dtype=float))
    if post.n_obs and x.shape[0] != post.X.shape[1]:
        raise ArgumentError("observation dimension mismatch")
    t = post.n_obs
    kxx = kernel_eval(post.kernel, x, x)
    X_new = np.vstack([post.X, x[None, :]]) if t else x[None, :].copy()
    Y_new = np.append(post.Y, float(y))
    if t == 0:
        d2 = kxx + post.eta2
        L_new = np.array([[math.sqrt(d2)]])
        b_new = Y_new / L_new[0, 0]
        return replace(post, X=X_new, Y=Y_new, L=L_new, b=b_new,
                       updates_since_rebuild=1)
    kvec = cross_gram(post.kernel, post.X, x[None, :])[:, 0]
    w = solve_triangular(post.L, kvec, lower=True)
    d2 = kxx + post.eta2 - float(w @ w)
    if d2 <= 0:
        raise NumericError(f"factor extension failed (pivot {d2:g}); "
                           f"jitter would exceed {_JITTER_LIMIT:g}")
    d = math.sqrt(d2)
    L_new = np.zeros((t + 1, t + 1))
    L_new[:t, :t] = post.L
    L_new[t, :t] = w
    L_new[t, t] = d
    b_new = np.append(post.b, (float(y) - float(w @ post.b)) / d)
    out = replace(post, X=X_new, Y=Y_new, L=L_new, b=b_new,
                  updates_since_rebuild=post.updates_since_rebuild + 1)
    if out.updates_since_rebuild >= _REBUILD_EVERY:
        out = _rebuild(out)
    return out


def information_gain(kernel: Kernel, X, eta2: float) -> float:
    """Half log-determinant of I + K/eta2 over the design X."""
    if eta2 <= 0:
        raise ArgumentError("noise variance must be positive")
    if np.asarray(X).size == 0:
        return 0.0
    X = _as_points(X)
    K = gram(kernel, X)
    M = np.eye(K.shape[0]) + K / eta2
    try:
        L = np.linalg.cholesky(M)
    except np.linalg.LinAlgError as exc:
        raise NumericError("information-gain factorization failed") from exc
    return float(np.log(np.diag(L)).sum())


def gamma_t(kernel: Kernel, space: FiniteMetricSpace, t: int, eta2: float,
            mode: str = "greedy") -> float:
    """Maximum information gain over t-point designs: exact search or greedy.

    Exact mode enumerates all subsets (capped at 1e6 combinations) and is
    meant as a test oracle; greedy runs the sequential argmax of marginal
    gain and never exceeds the exact value.
    """
    if space.coords is None:
        raise ArgumentError("gamma_t needs a coordinate-backed space")
    if t < 1 or t > space.n:
        raise ArgumentError(f"t must lie in 1..{space.n}")
    coords = space.coords
    if mode == "exact":
        if math.comb(space.n, t) > 1_000_000:
            raise CapacityError("exact gamma_t limited to 1e6 subsets")
        best = -math.inf
        for combo in itertools.combinations(range(space.n), t):
            best = max(best, information_gain(kernel, coords[list(combo)], eta2))
        return best
    if mode != "greedy":
        raise ArgumentError(f"mode must be 'exact' or 'greedy', got {mode!r}")
    chosen: list[int] = []
    post = GPPosterior.empty(kernel, eta2, dim=coords.shape[1])
    total = 0.0
    for _ in range(t):
        _, sig = posterior_predict_many(post, coords)
        gains = 0.5 * np.log1p(sig * sig / eta2)
        j = int(np.argmax(gains))            # first max = smallest id
        total += float(gains[j])
        post = posterior_update(post, coords[j], 0.0)  # variance ignores Y
        chosen.append(j)
    return total


def c_eta(eta2: float) -> float:
    """Variance-to-information conversion constant 2 / log(1 + 1/eta2)."""
    if eta2 <= 0:
        raise ArgumentError("noise variance must be positive")
    return 2.0 / math.log1p(1.0 / eta2)


def squared_gaussian_interval(mu: float, sigma: float, s: float) -> tuple[float, float]:
    """Interval (l, u) with P[X^2 outside (l^2, u^2)] < exp(-s^2) for X ~ N(mu, sigma^2)."""
    if s <= 0:
        raise ArgumentError("s must be positive")
    if sigma < 0:
        raise ArgumentError("sigma must be nonnegative")
    spread = math.sqrt(2.0) * sigma * s
    u = abs(mu) + spread
    l = max(0.0, abs(mu) - spread)
    return l, u


def squared_gaussian_outside_prob(mu: float, sigma: float, l: float, u: float) -> float:
    """Exact P[X^2 outside (l^2, u^2)] for X ~ N(mu, sigma^2), via the erf identity.

    Test oracle for the interval above; requires 0 <= l <= u.
    """
    if sigma <= 0:
        raise ArgumentError("sigma must be positive")
    if not (0 <= l <= u):
        raise ArgumentError("need 0 <= l <= u")
    mu = abs(mu)
    root2s = math.sqrt(2.0) * sigma
    return 0.5 * (math.erfc((u - mu) / root2s)
                  + math.erfc((u + mu) / root2s)
                  + math.erf((mu + l) / root2s)
                  - math.erf((mu - l) / root2s))


def squared_gp_bounds(mu: float, sigma: float, u: float, n_processes: int
                      ) -> tuple[float, float]:
    """Squared confidence interval (L, U) for one channel at joint level u.

    Folds the union bound over the ``n_processes`` channels into the level,
    so the joint event over all channels fails with probability below
    ``exp(-u)``.
    """
    if u <= 0:
        raise ArgumentError("u must be positive")
    if n_processes < 1:
        raise ArgumentError("n_processes must be at least 1")
    s = math.sqrt(u + math.log(n_processes))
    l, up = squared_gaussian_interval(mu, sigma, s)
    return l * l, up * up


def write_observation_log(path: str, points: np.ndarray, ys: np.ndarray) -> None:
    """Write the observation log CSV with columns ``iter,point_id,y``."""
    with open(path, "w", encoding="utf-8") as fh:
        fh.write("iter,point_id,y\n")
        for i, (p, y) in enumerate(zip(points, ys), start=1):
            fh.write(f"{i},{int(p)},{float(y):.12g}\n")
