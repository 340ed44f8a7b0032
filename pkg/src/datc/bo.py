"""Gaussian-process Bayesian optimization over protocol parameters.

Maximization throughout. Inputs live in the unit cube; targets are
standardized before fitting. Hyperparameters (signal variance, one
lengthscale per dimension, noise) are fitted by multi-start L-BFGS-B on
the log marginal likelihood in log space.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, field
from fractions import Fraction
from typing import Callable, Optional, Sequence

import numpy as np
from scipy.linalg import cho_solve, cholesky
from scipy.optimize import minimize
from scipy.stats import norm, qmc

SQRT5 = math.sqrt(5.0)
JITTER = 1e-8
MAX_JITTER = 1e-4


@dataclass(frozen=True)
class Dim:
    name: str
    lower: float
    upper: float
    integer: bool = False

    def __post_init__(self):
        if not self.lower < self.upper:
            raise ValueError(f"{self.name}: lower bound must be below upper bound")


@dataclass(frozen=True)
class ParamSpace:
    dims: tuple
    # (smaller, larger) name pairs that must satisfy smaller < larger
    constraints: tuple = ()

    @property
    def d(self) -> int:
        return len(self.dims)

    @property
    def names(self) -> list[str]:
        return [dm.name for dm in self.dims]

    def index(self, name: str) -> int:
        return self.names.index(name)

    def to_raw(self, u: np.ndarray) -> np.ndarray:
        u = np.atleast_2d(np.asarray(u, dtype=float))
        lo = np.array([dm.lower for dm in self.dims])
        hi = np.array([dm.upper for dm in self.dims])
        raw = lo + np.clip(u, 0.0, 1.0) * (hi - lo)
        for j, dm in enumerate(self.dims):
            if dm.integer:
                raw[:, j] = np.clip(np.round(raw[:, j]), dm.lower, dm.upper)
        return raw

    def to_unit(self, raw: np.ndarray) -> np.ndarray:
        raw = np.atleast_2d(np.asarray(raw, dtype=float))
        lo = np.array([dm.lower for dm in self.dims])
        hi = np.array([dm.upper for dm in self.dims])
        return (raw - lo) / (hi - lo)

    def feasible_raw(self, raw: np.ndarray) -> np.ndarray:
        raw = np.atleast_2d(raw)
        ok = np.ones(len(raw), dtype=bool)
        for a, b in self.constraints:
            ok &= raw[:, self.index(a)] < raw[:, self.index(b)]
        return ok

    def feasible(self, u: np.ndarray) -> np.ndarray:
        return self.feasible_raw(self.to_raw(u))

    def as_dict(self, raw_row) -> dict:
        out = {}
        for dm, v in zip(self.dims, raw_row):
            out[dm.name] = int(v) if dm.integer else float(v)
        return out


PROTOCOL_SPACE = ParamSpace(
    dims=(
        Dim("timeout_duration", 0.5, 3.0),
        Dim("ir_attempts", 2, 20, integer=True),
        Dim("alternates", 1, 8, integer=True),
        Dim("phase_delay_factor", 1.0, 4.0),
        Dim("nack_backoff_min", 0.01, 1.0),
        Dim("nack_backoff_max", 0.1, 5.0),
        Dim("start_ir_time", 10.0, 120.0),
        Dim("solve_timeout", 1.0, 10.0),
    ),
    constraints=(("nack_backoff_min", "nack_backoff_max"),),
)


# -- scoring -----------------------------------------------------------------

W_SUCCESS, W_HOLD, W_SPEED, W_RETRY = 100, 30, 10, 2
NMAC_PENALTY = -100
TIMEOUT_PENALTY = -50


def score(r_success, r_hold, r_speed, n_retry, nmac: bool = False,
          timeout: bool = False) -> float:
    """Weighted admission score with hard overrides (NMAC beats timeout).

    The weighted sum is evaluated exactly on the inputs' rational values and
    rounded once.
    """
    if nmac:
        return float(NMAC_PENALTY)
    if timeout:
        return float(TIMEOUT_PENALTY)
    q = (W_SUCCESS * Fraction(r_success) - W_HOLD * Fraction(r_hold)
         - W_SPEED * Fraction(r_speed) - W_RETRY * Fraction(n_retry))
    return float(q)


# -- sampling ----------------------------------------------------------------

def lhs_unit(n: int, d: int, rng: np.random.Generator) -> np.ndarray:
    if n < 1:
        raise ValueError("n must be >= 1")
    u = np.empty((n, d))
    for j in range(d):
        u[:, j] = (rng.permutation(n) + rng.random(n)) / n
    return u


def _repair(u: np.ndarray, space: ParamSpace, rng: np.random.Generator) -> np.ndarray:
    """Fix constraint violations without breaking stratification.

    A violating point swaps its value in the larger-side dimension with
    another point when that leaves both feasible; failing that, both
    coordinates are redrawn inside their own strata.
    """
    n = len(u)
    for a, b in space.constraints:
        ia, ib = space.index(a), space.index(b)
        for _ in range(100):
            bad = np.flatnonzero(~space.feasible(u))
            if bad.size == 0:
                break
            i = int(bad[0])
            fixed = False
            for j in range(n):
                if j == i:
                    continue
                v = u.copy()
                v[[i, j], ib] = v[[j, i], ib]
                if space.feasible(v[[i, j]]).all():
                    u = v
                    fixed = True
                    break
            if not fixed:
                for col in (ia, ib):
                    s = math.floor(u[i, col] * n)
                    u[i, col] = (min(s, n - 1) + rng.random()) / n
    return u


def lhs_sample(n: int, space: ParamSpace = PROTOCOL_SPACE, seed: int = 0) -> np.ndarray:
    """``n`` stratified points in the unit cube (one per stratum per dimension)."""
    rng = np.random.default_rng(seed)
    return _repair(lhs_unit(n, space.d, rng), space, rng)


# -- GP ----------------------------------------------------------------------

def matern52(x1, x2, sf2: float, ls) -> np.ndarray:
    x1 = np.atleast_2d(np.asarray(x1, dtype=float))
    x2 = np.atleast_2d(np.asarray(x2, dtype=float))
    ls = np.broadcast_to(np.asarray(ls, dtype=float), (x1.shape[1],))
    diff = (x1[:, None, :] - x2[None, :, :]) / ls
    r = np.sqrt(np.maximum((diff ** 2).sum(-1), 0.0))
    sr = SQRT5 * r
    return sf2 * (1.0 + sr + sr * sr / 3.0) * np.exp(-sr)


@dataclass
class GPModel:
    X: np.ndarray
    y: np.ndarray  # standardized
    y_mean: float
    y_std: float
    sf2: float
    ls: np.ndarray
    noise: float
    jitter: float = JITTER
    L: Optional[np.ndarray] = field(default=None, repr=False)
    alpha: Optional[np.ndarray] = field(default=None, repr=False)
    lml: float = float("nan")

    def _factor(self):
        K = matern52(self.X, self.X, self.sf2, self.ls)
        n = len(self.X)
        jit = self.jitter
        while True:
            try:
                self.L = cholesky(K + (self.noise + jit) * np.eye(n), lower=True)
                break
            except np.linalg.LinAlgError:
                jit *= 10
                if jit > MAX_JITTER:
                    raise
        self.jitter = jit
        self.alpha = cho_solve((self.L, True), self.y)

    def predict(self, Xs, standardized: bool = False):
        Xs = np.atleast_2d(Xs)
        Ks = matern52(Xs, self.X, self.sf2, self.ls)
        mu = Ks @ self.alpha
        v = cho_solve((self.L, True), Ks.T)
        var = np.maximum(self.sf2 - np.einsum("ij,ji->i", Ks, v), 0.0)
        sd = np.sqrt(var)
        if standardized:
            return mu, sd
        return mu * self.y_std + self.y_mean, sd * self.y_std


def _neg_lml(theta: np.ndarray, X: np.ndarray, y: np.ndarray) -> tuple[float, np.ndarray]:
    """Negative log marginal likelihood and its gradient in log-parameters."""
    n, d = X.shape
    sf2 = math.exp(theta[0])
    ls = np.exp(theta[1:1 + d])
    noise = math.exp(theta[1 + d])
    d2 = ((X[:, None, :] - X[None, :, :]) / ls) ** 2
    r = np.sqrt(d2.sum(-1))
    e = np.exp(-SQRT5 * r)
    Kf = sf2 * (1.0 + SQRT5 * r + 5.0 * r * r / 3.0) * e
    K = Kf + (noise + JITTER) * np.eye(n)
    try:
        L = cholesky(K, lower=True)
    except np.linalg.LinAlgError:
        return 1e10, np.zeros_like(theta)
    a = cho_solve((L, True), y)
    nll = float(0.5 * y @ a + np.log(np.diag(L)).sum() + 0.5 * n * math.log(2 * math.pi))
    W = cho_solve((L, True), np.eye(n)) - np.outer(a, a)
    g = np.empty_like(theta)
    g[0] = 0.5 * np.sum(W * Kf)
    dk = sf2 * (5.0 / 3.0) * (1.0 + SQRT5 * r) * e
    g[1:1 + d] = 0.5 * np.einsum("ij,ijk->k", W * dk, d2)
    g[1 + d] = 0.5 * noise * np.trace(W)
    return nll, g


LOG_BOUNDS_SF2 = (math.log(1e-2), math.log(1e2))
LOG_BOUNDS_LS = (math.log(1e-2), math.log(1e3))
LOG_BOUNDS_NOISE = (math.log(1e-8), math.log(1.0))


def fit_gp(X, y, seed: int = 0, restarts: int = 8,
           previous: Optional[GPModel] = None) -> GPModel:
    """Fit a Matérn-5/2 ARD GP by maximizing the log marginal likelihood."""
    X = np.atleast_2d(np.asarray(X, dtype=float))
    y = np.asarray(y, dtype=float)
    if len(X) < 2:
        raise ValueError("need at least 2 observations")
    d = X.shape[1]
    mean = float(y.mean())
    std = float(y.std())
    if std == 0.0:
        std = 1.0
    ys = (y - mean) / std
    bounds = [LOG_BOUNDS_SF2] + [LOG_BOUNDS_LS] * d + [LOG_BOUNDS_NOISE]
    rng = np.random.default_rng(seed)
    starts = [np.concatenate([[0.0], np.full(d, math.log(0.5)), [math.log(1e-3)]])]
    for _ in range(restarts - 1):
        starts.append(np.array([rng.uniform(lo, hi) for lo, hi in bounds]))
    best = None
    for s in starts:
        res = minimize(_neg_lml, s, args=(X, ys), jac=True, method="L-BFGS-B", bounds=bounds)
        if best is None or res.fun < best.fun - 1e-12:
            best = res
    th = best.x
    model = GPModel(X, ys, mean, std, math.exp(th[0]), np.exp(th[1:1 + d]),
                    math.exp(th[1 + d]), lml=-float(best.fun))
    try:
        model._factor()
    except np.linalg.LinAlgError:
        if previous is None:
            raise
        return previous
    return model


def expected_improvement(mu, sigma, best):
    """EI for maximization; reduces to max(0, mu - best) where sigma is 0."""
    mu = np.asarray(mu, dtype=float)
    sigma = np.asarray(sigma, dtype=float)
    imp = mu - best
    with np.errstate(divide="ignore", invalid="ignore"):
        z = np.where(sigma > 0, imp / np.where(sigma > 0, sigma, 1.0), 0.0)
        ei = np.where(sigma > 0, sigma * (z * norm.cdf(z) + norm.pdf(z)), np.maximum(imp, 0.0))
    ei = np.maximum(ei, 0.0)
    return float(ei) if ei.ndim == 0 else ei


def model_ei(model: GPModel, U, best: float):
    mu, sd = model.predict(U)
    return expected_improvement(mu, sd, best)


def propose_next(model: GPModel, space: ParamSpace, best: float, seed: int = 0,
                 n_candidates: int = 10_000, n_refine: int = 10,
                 local_steps: int = 40) -> np.ndarray:
    """Maximize EI over seeded quasi-random candidates, then refine locally."""
    rng = np.random.default_rng(seed)
    cand = qmc.Halton(d=space.d, scramble=True, seed=seed).random(n_candidates)
    cand = cand[space.feasible(cand)]
    ei = model_ei(model, cand, best)
    order = np.argsort(-ei, kind="stable")[:n_refine]
    pool = [cand[order]]
    for i in order:
        for scale in (0.05, 0.01):
            step = np.clip(cand[i] + rng.normal(0.0, scale, (local_steps // 2, space.d)), 0, 1)
            pool.append(step[space.feasible(step)])
    allc = np.vstack(pool)
    allei = model_ei(model, allc, best)
    return allc[int(np.argmax(allei))]


def ard_importance(model_or_ls) -> np.ndarray:
    ls = model_or_ls.ls if isinstance(model_or_ls, GPModel) else np.asarray(model_or_ls, float)
    inv = 1.0 / ls
    return inv / inv.sum()


# -- campaigns ---------------------------------------------------------------

@dataclass
class TrialOutcome:
    r_success: float
    r_hold: float
    r_speed: float
    n_retry: float
    nmac: bool = False
    timeout: bool = False
    value: Optional[float] = None  # overrides the weighted score (synthetic objectives)


@dataclass
class TrialRecord:
    index: int
    unit: np.ndarray
    raw: dict
    score: float
    outcome: TrialOutcome
    seed: int
    phase: str  # "lhs" | "ei"


@dataclass
class Campaign:
    trials: list
    best_trace: list
    model: Optional[GPModel]
    importance: Optional[np.ndarray]
    space: ParamSpace

    @property
    def best(self) -> TrialRecord:
        return max(self.trials, key=lambda t: (t.score, -t.index))


def outcome_score(o: TrialOutcome) -> float:
    if o.value is not None:
        return float(o.value)
    return score(o.r_success, o.r_hold, o.r_speed, o.n_retry, o.nmac, o.timeout)


def run_campaign(objective: Callable[[dict, int], TrialOutcome],
                 space: ParamSpace = PROTOCOL_SPACE, budget: int = 50, n_init: int = 10,
                 seed: int = 0, sim_seed: int = 0,
                 on_trial: Optional[Callable[[TrialRecord], None]] = None) -> Campaign:
    """LHS seeding followed by EI-guided trials; ``objective(params, sim_seed)``."""
    if budget < 1:
        raise ValueError("budget must be >= 1")
    n_init = min(n_init, budget)
    trials: list[TrialRecord] = []
    trace: list[float] = []
    model = None

    def evaluate(u: np.ndarray, phase: str):
        raw = space.as_dict(space.to_raw(u)[0])
        out = objective(raw, sim_seed)
        rec = TrialRecord(len(trials), np.asarray(u, float), raw, outcome_score(out), out,
                          sim_seed, phase)
        trials.append(rec)
        trace.append(max(trace[-1], rec.score) if trace else rec.score)
        if on_trial:
            on_trial(rec)

    for u in lhs_sample(n_init, space, seed):
        evaluate(u, "lhs")
    while len(trials) < budget:
        X = np.array([t.unit for t in trials])
        y = np.array([t.score for t in trials])
        k = len(trials)
        model = fit_gp(X, y, seed=seed * 1000 + k, previous=model)
        u = propose_next(model, space, float(y.max()), seed=seed * 1000 + k)
        evaluate(u, "ei")
    if model is None and len(trials) >= 2:
        model = fit_gp(np.array([t.unit for t in trials]),
                       np.array([t.score for t in trials]), seed=seed)
    imp = ard_importance(model) if model is not None else None
    return Campaign(trials, trace, model, imp, space)
