"""Optimistic optimization over tree discretization levels, with regret accounting.

Each iteration picks a discretization depth, forms upper confidence bounds
over the non-pruned tree nodes at that depth or above, queries the argmax,
and records cumulative and simple regret against the sampled ground truth.
A squared-process variant maintains one posterior per channel and combines
per-channel squared confidence intervals into objective bounds.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np
from scipy.linalg import solve_triangular

from .chaining import ChainingTree, build_forward, omega_table, prune_backward
from .errors import ArgumentError, NumericError
from .gp import (GPPosterior, Kernel, c_eta, gram, posterior_predict_many)
from .metric import FiniteMetricSpace
from .smoothness import SmoothnessModel, confidence_level_u_i

_DEPTH_RULES = ("halflog2", "omega")


@dataclass(frozen=True)
class OptimizerConfig:
    """Knobs of one optimization run."""

    u: float = 2.0
    a: float = 2.0
    eta2: float = 0.01
    t_max: int = 100
    depth_rule: str = "halflog2"
    schedule: str = "geometric"
    shift: int = 1
    seed: int = 0

    def __post_init__(self):
        if self.u <= 0:
            raise ArgumentError("u must be positive")
        if self.a <= 1:
            raise ArgumentError("a must exceed 1")
        if self.eta2 <= 0:
            raise ArgumentError("eta2 must be positive")
        if self.t_max < 0:
            raise ArgumentError("t_max must be nonnegative")
        if self.depth_rule not in _DEPTH_RULES:
            raise ArgumentError(f"depth_rule must be one of {_DEPTH_RULES}")
        if self.schedule not in ("geometric", "entropy"):
            raise ArgumentError("schedule must be 'geometric' or 'entropy'")


def depth_half_log2(i: int, max_depth: int | None = None) -> int:
    """Depth rule ceil(log2(i) / 2), optionally clamped to the tree depth."""
    if i < 1:
        raise ArgumentError("iteration index must be positive")
    h = math.ceil(0.5 * math.log2(i))
    return h if max_depth is None else min(h, max_depth)


def depth_omega_threshold(tree: ChainingTree, model: SmoothnessModel, u: float,
                          a: float, i: int,
                          omega_values: np.ndarray | None = None) -> int:
    """Smallest depth whose discretization error is below sqrt(log(i)/i)."""
    if i < 2:
        raise ArgumentError("the threshold rule needs i >= 2")
    thr = math.sqrt(math.log(i) / i)
    if omega_values is None:
        omega_values = omega_table(tree, u, a, model)
    for h in range(tree.max_depth + 1):
        val = float(omega_values[h]) if h < len(omega_values) else 0.0
        if val <= thr:
            return h
    return tree.max_depth


@dataclass
class StepChoice:
    point: int
    u_i: float
    depth: int
    ucb: float


@dataclass
class BanditState:
    """State consumed by :func:`gp_ucb_step`: posterior, tree and config."""

    posterior: GPPosterior
    tree: ChainingTree
    config: OptimizerConfig
    model: SmoothnessModel = field(default_factory=SmoothnessModel.gaussian)
    last_depth: int = 0
    omega_values: np.ndarray | None = None


def _select_depth(state: BanditState, i: int) -> int:
    cfg = state.config
    if cfg.depth_rule == "halflog2":
        h = depth_half_log2(i, state.tree.max_depth)
    else:
        if i < 2:
            h = 0
        else:
            if state.omega_values is None:
                state.omega_values = omega_table(state.tree, cfg.u, cfg.a, state.model)
            h = depth_omega_threshold(state.tree, state.model, cfg.u, cfg.a, i,
                                      omega_values=state.omega_values)
    # the recorded depth schedule must be non-decreasing in i
    h = max(h, state.last_depth)
    state.last_depth = h
    return h


def gp_ucb_step(state: BanditState, i: int) -> StepChoice:
    """One optimistic selection over the candidate nodes at the current depth.

    Returns the argmax of ``mu + sigma sqrt(2 u_i)`` over the non-pruned
    node locations at depth <= h(i), breaking ties toward the smallest
    point id.
    """
    if i < 1:
        raise ArgumentError("iteration index must be positive")
    tree, cfg = state.tree, state.config
    h = _select_depth(state, i)
    u_i = confidence_level_u_i(cfg.u, tree.capacity(h), i, cfg.a)
    cand = tree.candidate_locations(h)
    if cand.size == 0:
        raise NumericError("empty candidate level")  # structurally impossible
    coords = tree.space.coords
    if coords is None:
        raise ArgumentError("optimization needs a coordinate-backed space")
    mu, sig = posterior_predict_many(state.posterior, coords[cand])
    ucb = mu + sig * math.sqrt(2.0 * u_i)
    j = int(np.argmax(ucb))                  # first maximum = smallest id
    return StepChoice(int(cand[j]), u_i, h, float(ucb[j]))


class _SharedPosterior:
    """Incrementally factored posterior over a fixed point set.

    Keeps ``V = L^{-1} K(queries, points)`` and ``B = L^{-1} Y`` so one
    iteration costs O(t n) instead of O(t^2 n); refactored from scratch
    every ``rebuild_every`` updates to cap round-off drift.  Supports
    several output channels sharing the same query locations.
    """

    def __init__(self, kernel: Kernel, eta2: float, coords: np.ndarray,
                 n_outputs: int, t_max: int, rebuild_every: int = 64):
        self.Kcc = gram(kernel, coords)
        self.diag = np.diag(self.Kcc).copy()
        self.eta2 = float(eta2)
        n = self.Kcc.shape[0]
        cap = max(t_max, 1)
        self.L = np.zeros((cap, cap))
        self.V = np.zeros((cap, n))
        self.B = np.zeros((cap, n_outputs))
        self.Yraw = np.zeros((cap, n_outputs))
        self.q = np.zeros(cap, dtype=int)
        self.sumsq = np.zeros(n)
        self.t = 0
        self.rebuild_every = rebuild_every

    def predict(self) -> tuple[np.ndarray, np.ndarray]:
        var = np.clip(self.diag - self.sumsq, 0.0, None)
        if self.t == 0:
            return np.zeros((self.Kcc.shape[0], self.B.shape[1])), np.sqrt(var)
        mu = self.V[: self.t].T @ self.B[: self.t]
        return mu, np.sqrt(var)

    def noiseless_variance(self) -> np.ndarray:
        return np.clip(self.diag - self.sumsq, 0.0, None)

    def add(self, j: int, y_row: np.ndarray) -> None:
        t = self.t
        w = self.V[:t, j]
        d2 = self.diag[j] + self.eta2 - float(w @ w)
        if d2 <= 0:
            raise NumericError(f"posterior factor extension failed (pivot {d2:g})")
        d = math.sqrt(d2)
        self.L[t, :t] = w
        self.L[t, t] = d
        self.V[t] = (self.Kcc[j] - w @ self.V[:t]) / d
        self.B[t] = (np.asarray(y_row, dtype=float) - w @ self.B[:t]) / d
        self.Yraw[t] = y_row
        self.q[t] = j
        self.sumsq += self.V[t] * self.V[t]
        self.t += 1
        if self.t % self.rebuild_every == 0:
            self._rebuild()

    def _rebuild(self) -> None:
        t = self.t
        sel = self.q[:t]
        C = self.Kcc[np.ix_(sel, sel)] + self.eta2 * np.eye(t)
        try:
            L = np.linalg.cholesky(C)
        except np.linalg.LinAlgError as exc:
            raise NumericError("posterior refactorization failed") from exc
        self.L[:t, :t] = L
        self.V[:t] = solve_triangular(L, self.Kcc[sel, :], lower=True)
        self.B[:t] = solve_triangular(L, self.Yraw[:t], lower=True)
        self.sumsq = np.einsum("ij,ij->j", self.V[:t], self.V[:t])


@dataclass
class RegretRecord:
    """Per-iteration trace of one optimization run."""

    config: OptimizerConfig
    space_n: int
    sup_f: float | None
    tree_signature: tuple
    iters: np.ndarray
    depths: np.ndarray
    u_is: np.ndarray
    points: np.ndarray
    ucbs: np.ndarray
    ys: np.ndarray
    inst_regret: np.ndarray
    cum_regret: np.ndarray
    simple_regret: np.ndarray
    sigma_before: np.ndarray
    widths: np.ndarray
    info_gain: np.ndarray        # I(X_t) after each iteration
    sigma_sq_cum: np.ndarray     # running sum of posterior variances at queries
    y_channels: np.ndarray | None = None
    channel_covered: np.ndarray | None = None

    def __len__(self) -> int:
        return int(self.iters.size)

    def to_csv(self, path: str) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write("iter,depth,u_i,point_id,ucb,y,inst_regret,cum_regret,simple_regret\n")
            for k in range(len(self)):
                fields = [f"{int(self.iters[k])}", f"{int(self.depths[k])}",
                          f"{self.u_is[k]:.12g}", f"{int(self.points[k])}",
                          f"{self.ucbs[k]:.12g}", f"{self.ys[k]:.12g}"]
                for arr in (self.inst_regret, self.cum_regret, self.simple_regret):
                    v = arr[k]
                    fields.append("" if np.isnan(v) else f"{v:.12g}")
                fh.write(",".join(fields) + "\n")


def _tree_signature(tree: ChainingTree) -> tuple:
    return (tree.space.n, tree.schedule, tree.shift, tree.max_depth,
            len(tree.nodes), tree.restart_count, tree.u)


def _prepare_tree(space: FiniteMetricSpace, config: OptimizerConfig,
                  tree: ChainingTree | None) -> ChainingTree:
    if tree is not None:
        return tree
    built = build_forward(space, schedule=config.schedule, shift=config.shift)
    if config.schedule == "geometric":
        built = prune_backward(built, config.u)
    return built


def run_gp_ucb(space: FiniteMetricSpace, kernel: Kernel, config: OptimizerConfig,
               truth: np.ndarray | None = None, seed=0,
               tree: ChainingTree | None = None, observe=None) -> RegretRecord:
    """Run the optimizer for ``t_max`` iterations on one sampled objective.

    ``truth`` holds f over the point set (simulation mode: noisy values are
    drawn internally and regrets are exact).  Alternatively pass an
    ``observe(point_id, rng) -> y`` callback for live mode, where regrets
    against the unknown optimum are left blank.
    """
    if truth is None and observe is None:
        raise ArgumentError("need either a truth vector or an observe callback")
    if space.coords is None:
        raise ArgumentError("optimization needs a coordinate-backed space")
    tree = _prepare_tree(space, config, tree)
    rng = np.random.default_rng(seed)
    shared = _SharedPosterior(kernel, config.eta2, space.coords, 1, config.t_max)
    sup_f = float(np.max(truth)) if truth is not None else None
    omega_vals = None
    if config.depth_rule == "omega":
        omega_vals = omega_table(tree, config.u, config.a, SmoothnessModel.gaussian())

    t_max = config.t_max
    out = {name: np.zeros(t_max) for name in
           ("u_is", "ucbs", "ys", "inst", "cum", "simple", "sigma", "width",
            "info", "ssq")}
    iters = np.arange(1, t_max + 1)
    depths = np.zeros(t_max, dtype=int)
    points = np.zeros(t_max, dtype=int)

    noise_sd = math.sqrt(config.eta2)
    last_h = 0
    cum = 0.0
    best_f = -math.inf
    info = 0.0
    ssq = 0.0
    for k in range(t_max):
        i = k + 1
        if config.depth_rule == "halflog2":
            h = depth_half_log2(i, tree.max_depth)
        else:
            h = 0 if i < 2 else depth_omega_threshold(
                tree, SmoothnessModel.gaussian(), config.u, config.a, i,
                omega_values=omega_vals)
        h = max(h, last_h)
        last_h = h
        u_i = confidence_level_u_i(config.u, tree.capacity(h), i, config.a)
        cand = tree.candidate_locations(h)
        mu, sig = shared.predict()
        mu = mu[:, 0]
        ucb = mu[cand] + sig[cand] * math.sqrt(2.0 * u_i)
        x = int(cand[int(np.argmax(ucb))])

        sigma_b = float(sig[x])
        var_b = float(shared.noiseless_variance()[x])
        if truth is not None:
            y = float(truth[x]) + rng.normal(0.0, noise_sd)
        else:
            y = float(observe(x, rng))
        info += 0.5 * math.log1p(var_b / config.eta2)
        ssq += var_b
        shared.add(x, np.array([y]))

        depths[k] = h
        points[k] = x
        out["u_is"][k] = u_i
        out["ucbs"][k] = float(np.max(ucb))
        out["ys"][k] = y
        out["sigma"][k] = sigma_b
        out["width"][k] = 2.0 * sigma_b * math.sqrt(2.0 * u_i)
        out["info"][k] = info
        out["ssq"][k] = ssq
        if truth is not None:
            inst = sup_f - float(truth[x])
            cum += inst
            best_f = max(best_f, float(truth[x]))
            out["inst"][k] = inst
            out["cum"][k] = cum
            out["simple"][k] = sup_f - best_f
        else:
            out["inst"][k] = out["cum"][k] = out["simple"][k] = math.nan

    return RegretRecord(config, space.n, sup_f, _tree_signature(tree),
                        iters, depths, out["u_is"], points, out["ucbs"], out["ys"],
                        out["inst"], out["cum"], out["simple"], out["sigma"],
                        out["width"], out["info"], out["ssq"])


def run_squared_gp_ucb(space: FiniteMetricSpace, kernel: Kernel, n_channels: int,
                       config: OptimizerConfig, truth: np.ndarray, seed=0,
                       tree: ChainingTree | None = None) -> RegretRecord:
    """Optimize f = -(sum of squared channels) from separated noisy observations.

    ``truth`` has shape (n_channels, n): per-channel latent values.  All
    channels are observed at the chosen point each iteration.  Objective
    bounds negate and swap the per-channel squared intervals.
    """
    if kernel.family == "linear":
        raise ArgumentError("squared-process optimization needs a stationary kernel")
    if space.coords is None:
        raise ArgumentError("optimization needs a coordinate-backed space")
    truth = np.asarray(truth, dtype=float)
    if truth.shape != (n_channels, space.n):
        raise ArgumentError(f"truth must have shape ({n_channels}, {space.n})")
    tree = _prepare_tree(space, config, tree)
    rng = np.random.default_rng(seed)
    shared = _SharedPosterior(kernel, config.eta2, space.coords, n_channels,
                              config.t_max)
    f_true = -np.sum(truth * truth, axis=0)
    sup_f = float(f_true.max())
    log_n = math.log(n_channels)

    t_max = config.t_max
    iters = np.arange(1, t_max + 1)
    depths = np.zeros(t_max, dtype=int)
    points = np.zeros(t_max, dtype=int)
    cols = {name: np.zeros(t_max) for name in
            ("u_is", "ucbs", "ys", "inst", "cum", "simple", "sigma", "width",
             "info", "ssq")}
    y_channels = np.zeros((t_max, n_channels))
    covered = np.zeros(t_max, dtype=bool)

    omega_vals = None
    if config.depth_rule == "omega":
        model = SmoothnessModel.squared_gp(n_channels, kernel.variance)
        omega_vals = omega_table(tree, config.u, config.a, model)

    noise_sd = math.sqrt(config.eta2)
    last_h = 0
    cum = 0.0
    best_f = -math.inf
    info = 0.0
    ssq = 0.0
    for k in range(t_max):
        i = k + 1
        if config.depth_rule == "halflog2":
            h = depth_half_log2(i, tree.max_depth)
        else:
            model = SmoothnessModel.squared_gp(n_channels, kernel.variance)
            h = 0 if i < 2 else depth_omega_threshold(
                tree, model, config.u, config.a, i, omega_values=omega_vals)
        h = max(h, last_h)
        last_h = h
        u_i = confidence_level_u_i(config.u, tree.capacity(h), i, config.a)
        cand = tree.candidate_locations(h)
        mu, sig = shared.predict()
        spread = math.sqrt(2.0 * (u_i + log_n)) * sig[:, None]
        hi = (np.abs(mu) + spread) ** 2
        lo = np.clip(np.abs(mu) - spread, 0.0, None) ** 2
        ucb_f = -lo.sum(axis=1)
        x = int(cand[int(np.argmax(ucb_f[cand]))])

        sigma_b = float(sig[x])
        var_b = float(shared.noiseless_variance()[x])
        y_row = truth[:, x] + rng.normal(0.0, noise_sd, size=n_channels)
        g_sq = truth[:, x] ** 2
        covered[k] = bool(np.all((g_sq >= lo[x] - 1e-12) & (g_sq <= hi[x] + 1e-12)))
        info += 0.5 * math.log1p(var_b / config.eta2)
        ssq += var_b
        shared.add(x, y_row)

        depths[k] = h
        points[k] = x
        y_channels[k] = y_row
        cols["u_is"][k] = u_i
        cols["ucbs"][k] = float(ucb_f[x])
        cols["ys"][k] = -float(np.sum(y_row * y_row))
        cols["sigma"][k] = sigma_b
        cols["width"][k] = float(ucb_f[x] + hi[x].sum())   # U_f - L_f at the query
        cols["info"][k] = info
        cols["ssq"][k] = ssq
        inst = sup_f - float(f_true[x])
        cum += inst
        best_f = max(best_f, float(f_true[x]))
        cols["inst"][k] = inst
        cols["cum"][k] = cum
        cols["simple"][k] = sup_f - best_f

    return RegretRecord(config, space.n, sup_f, _tree_signature(tree),
                        iters, depths, cols["u_is"], points, cols["ucbs"],
                        cols["ys"], cols["inst"], cols["cum"], cols["simple"],
                        cols["sigma"], cols["width"], cols["info"], cols["ssq"],
                        y_channels=y_channels, channel_covered=covered)


@dataclass
class RegretBoundSeries:
    """Computable right-hand sides of the regret guarantee, per iteration."""

    per_step: np.ndarray      # running sum of depth bounds plus interval widths
    closed_form: np.ndarray   # information-gain form with the realized gain


def regret_bound_rhs(record: RegretRecord, tree: ChainingTree,
                     model: SmoothnessModel, config: OptimizerConfig
                     ) -> RegretBoundSeries:
    """Evaluate both regret-bound forms along a recorded run.

    The per-step form adds the depth-h(i) discretization bound to the
    recorded confidence width at each query.  The closed form uses the
    realized information gain in place of its maximum, which preserves
    validity of the chain of inequalities.
    """
    if record.space_n != tree.space.n or record.tree_signature != _tree_signature(tree):
        raise ArgumentError("record was produced with a different tree")
    omega_vals = omega_table(tree, config.u, config.a, model)

    def om(h: int) -> float:
        return float(omega_vals[h]) if h < len(omega_vals) else 0.0

    t = len(record)
    om_seq = np.array([om(int(h)) for h in record.depths])
    per_step = np.cumsum(om_seq + record.widths)
    om_cum = np.cumsum(om_seq)
    ceta = c_eta(config.eta2)
    ts = np.arange(1, t + 1, dtype=float)
    closed = 2.0 * np.sqrt(2.0 * ceta * ts * record.u_is * record.info_gain) + om_cum
    return RegretBoundSeries(per_step, closed)
