"""Sparse linear modelling of the target indicator from audience shares.

The estimator minimises (1/n) * ||y - X b||^2 + alpha * ||b||_1 by cyclic
coordinate descent on internally standardised columns (mean 0, variance 1,
y centred). alpha is chosen by k-fold cross validation repeated over many
splits, the selected variables are refit by ordinary least squares, and
reported skill is leave-one-out R^2.

Everything is deterministic for a fixed seed: CV splits come from a seeded
generator and all candidate alphas are evaluated on the same splits.
"""

from __future__ import annotations

import logging
from dataclasses import dataclass, field

import numpy as np

logger = logging.getLogger(__name__)

DEFAULT_TOL = 1e-7
DEFAULT_MAX_SWEEPS = 10_000

# KKT slack: convergence certifies subgradient optimality within 10 * tol
KKT_BUDGET = 10.0


class RegressError(ValueError):
    pass


def soft_threshold(z, gamma):
    """sign(z) * max(|z| - gamma, 0), elementwise."""
    z = np.asarray(z, dtype=float)
    return np.sign(z) * np.maximum(np.abs(z) - gamma, 0.0)


def lasso_objective(x: np.ndarray, y: np.ndarray, beta: np.ndarray, alpha: float) -> float:
    """(1/n) * ||y - X b||^2 + alpha * ||b||_1 with no intercept term."""
    r = y - x @ beta
    return float(r @ r) / len(y) + alpha * float(np.abs(beta).sum())


def r_squared(y: np.ndarray, yhat: np.ndarray) -> float:
    """1 - SSE/SST against the mean of y. Negative when worse than the mean."""
    y = np.asarray(y, dtype=float)
    yhat = np.asarray(yhat, dtype=float)
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0.0:
        raise RegressError("R^2 undefined: target is constant")
    sse = float(((y - yhat) ** 2).sum())
    return 1.0 - sse / sst


# ---------------------------------------------------------------------------
# standardisation and the batched solver core
#
# Each cross-validation fold is one "problem": the training rows are
# standardised, reduced to a Gram matrix H = (1/n) Xs'Xs and correlation
# vector c = (1/n) Xs'yc, and all problems advance through the alpha path
# together. A single fit is just a batch of size one, so every code path
# shares one solver.


@dataclass
class _Problems:
    hs: np.ndarray  # (F, p, p) standardised Gram / n
    cs: np.ndarray  # (F, p) standardised correlations / n
    hd: np.ndarray  # (F, p) diagonal of hs
    mu: np.ndarray  # (F, p) training column means
    sigma: np.ndarray  # (F, p) training column scales (1 where dropped)
    ok: np.ndarray  # (F, p) usable columns (nonzero training variance)
    ybar: np.ndarray  # (F,)
    yss: np.ndarray  # (F,) training variance of y (1/n scaling)
    n_train: np.ndarray  # (F,)


def _standardize_problems(x: np.ndarray, y: np.ndarray, train_masks: np.ndarray) -> _Problems:
    if not np.isfinite(x).all() or not np.isfinite(y).all():
        raise RegressError("non-finite values in the regression inputs")
    m = train_masks.astype(float)
    n_t = m.sum(axis=1)
    if (n_t < 2).any():
        raise RegressError("a training fold has fewer than 2 rows")
    mu = (m @ x) / n_t[:, None]
    ybar = (m @ y) / n_t
    yss = (m @ (y * y)) / n_t - ybar**2
    outer = x[:, :, None] * x[:, None, :]
    g_raw = np.tensordot(m, outer, axes=(1, 0))
    c_raw = m @ (x * y[:, None])
    ms = np.einsum("fpp->fp", g_raw) / n_t[:, None]
    var = ms - mu**2
    ok = var > 1e-24 + 1e-16 * ms
    sigma = np.where(ok, np.sqrt(np.maximum(var, 0.0)), 1.0)
    if not ok.all():
        logger.info("dropped %d zero-variance column instances across folds", int((~ok).sum()))
    hs = (g_raw / n_t[:, None, None] - mu[:, :, None] * mu[:, None, :]) / (
        sigma[:, :, None] * sigma[:, None, :]
    )
    cs = (c_raw / n_t[:, None] - mu * ybar[:, None]) / sigma
    okf = ok.astype(float)
    hs *= okf[:, :, None] * okf[:, None, :]
    cs *= okf
    idx = np.arange(x.shape[1])
    hs[:, idx, idx] = np.where(ok, hs[:, idx, idx], 1.0)
    hd = hs[:, idx, idx].copy()
    return _Problems(
        hs=hs, cs=cs, hd=hd, mu=mu, sigma=sigma, ok=ok, ybar=ybar, yss=yss, n_train=n_t
    )


def _kkt_violation(pr: _Problems, beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """Worst subgradient violation per problem, on the standardised scale."""
    q = np.einsum("fpq,fq->fp", pr.hs, beta)
    g2 = 2.0 * (pr.cs - q)
    a = alpha[:, None]
    active = beta != 0.0
    viol_active = np.abs(g2 - a * np.sign(beta))
    viol_zero = np.maximum(np.abs(g2) - a, 0.0)
    v = np.where(active, viol_active, viol_zero)
    v = np.where(pr.ok, v, 0.0)
    return v.max(axis=1) if v.size else np.zeros(len(beta))


def _cov_objective(pr: _Problems, beta: np.ndarray, alpha: np.ndarray) -> np.ndarray:
    """(1/n) objective per problem, from the Gram form (no row data needed)."""
    quad = np.einsum("fp,fpq,fq->f", beta, pr.hs, beta)
    return pr.yss - 2.0 * (pr.cs * beta).sum(axis=1) + quad + alpha * np.abs(beta).sum(axis=1)


def _kkt_worst(g: np.ndarray, c: np.ndarray, beta: np.ndarray, alpha: float, ok: np.ndarray) -> float:
    """Worst KKT violation for one problem given its Gram matrix."""
    g2 = 2.0 * (c - g @ beta)
    v = np.where(beta != 0.0, np.abs(g2 - alpha * np.sign(beta)), np.maximum(np.abs(g2) - alpha, 0.0))
    v = np.where(ok, v, 0.0)
    return float(v.max()) if v.size else 0.0


def _direct_solve(
    g: np.ndarray,
    c: np.ndarray,
    alpha: float,
    beta_init: np.ndarray,
    ok: np.ndarray,
    bar: float,
) -> np.ndarray | None:
    """Try to jump straight to the optimum via an active-set linear solve.

    Guess the support and signs from the current iterate, solve the KKT
    stationarity system on that support, and accept only if the full
    certificate passes; otherwise grow/shrink the support and retry a
    bounded number of times. Returns None when no certified solution is
    found, in which case coordinate descent simply carries on.
    """
    p = len(c)
    gam = 0.5 * alpha
    active = [int(j) for j in np.flatnonzero(beta_init)]
    signs = {j: float(np.sign(beta_init[j])) for j in active}
    if not active:
        k = int(np.argmax(np.abs(c) * ok))
        if 2.0 * abs(c[k]) <= alpha + bar:
            candidate = np.zeros(p)
            if _kkt_worst(g, c, candidate, alpha, ok) <= bar:
                return candidate
            return None
        active = [k]
        signs = {k: float(np.sign(c[k])) or 1.0}
    for _ in range(4 * p + 8):
        idx = np.asarray(active)
        s = np.asarray([signs[j] for j in active])
        gsub = g[np.ix_(idx, idx)]
        rhs = c[idx] - gam * s
        try:
            sol = np.linalg.solve(gsub, rhs)
        except np.linalg.LinAlgError:
            sol = None
        if sol is None or not np.isfinite(sol).all():
            # singular active set (more actives than rows, or duplicated
            # columns): the stationarity system is still consistent at an
            # optimum, so take the minimum-norm solution and let the
            # certificate decide
            sol = np.linalg.lstsq(gsub, rhs, rcond=None)[0]
            if not np.isfinite(sol).all():
                return None
        if alpha > 0.0:
            flipped = sol * s < 0.0
            if flipped.any():
                active = [j for j, fl in zip(active, flipped) if not fl]
                if not active:
                    candidate = np.zeros(p)
                    if _kkt_worst(g, c, candidate, alpha, ok) <= bar:
                        return candidate
                    return None
                continue
        candidate = np.zeros(p)
        candidate[idx] = sol
        grad2 = 2.0 * (c - g @ candidate)
        viol = np.maximum(np.abs(grad2) - alpha, 0.0)
        viol[idx] = 0.0
        viol = np.where(ok, viol, 0.0)
        k = int(np.argmax(viol))
        if viol[k] <= bar:
            if _kkt_worst(g, c, candidate, alpha, ok) <= bar:
                return candidate
            return None
        active.append(k)
        signs[k] = float(np.sign(grad2[k])) or 1.0
    return None


def _cd_solve(
    pr: _Problems,
    alpha,
    beta0: np.ndarray | None = None,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    history: list | None = None,
) -> tuple[np.ndarray, int, bool]:
    """Cyclic coordinate descent for a batch of standardised problems.

    Each problem sweeps until its largest coefficient change is below tol
    and the KKT certificate holds within budget; finished problems drop out
    of the batch. On a geometric schedule the slow ones get an active-set
    direct solve whose result is only accepted when the same certificate
    passes, so the accelerator cannot change what convergence means.
    `history` collects the first problem's objective after each sweep while
    it is still live.
    """
    f, p = pr.cs.shape
    alpha_full = np.broadcast_to(np.asarray(alpha, dtype=float), (f,)).copy()
    beta_out = np.zeros((f, p)) if beta0 is None else beta0.copy()
    done = np.zeros(f, dtype=bool)
    bar = KKT_BUDGET * tol * 0.999

    live = np.arange(f)
    hs = pr.hs
    cs = pr.cs
    hd = pr.hd
    ok = pr.ok
    yss = pr.yss
    al = alpha_full.copy()
    beta = beta_out.copy()
    if beta0 is None:
        q = np.zeros((f, p))
    else:
        q = np.einsum("fpq,fq->fp", hs, beta)
    stall = np.zeros(f, dtype=np.int64)

    sweeps = 0
    next_polish = 8
    while live.size and sweeps < max_sweeps:
        sweeps += 1
        gamma = 0.5 * al
        maxd = np.zeros(live.size)
        for j in range(p):
            b = cs[:, j] - q[:, j] + hd[:, j] * beta[:, j]
            nb = soft_threshold(b, gamma) / hd[:, j]
            d = nb - beta[:, j]
            if d.any():
                beta[:, j] = nb
                q += hs[:, :, j] * d[:, None]
                np.maximum(maxd, np.abs(d), out=maxd)
        if history is not None and live.size and live[0] == 0:
            quad = float(beta[0] @ hs[0] @ beta[0])
            history.append(
                float(yss[0] - 2.0 * float(cs[0] @ beta[0]) + quad + al[0] * np.abs(beta[0]).sum())
            )

        finish = np.zeros(live.size, dtype=bool)
        success = np.zeros(live.size, dtype=bool)
        quiet = maxd < tol
        stall[quiet] += 1
        stall[~quiet] = 0
        for i in np.flatnonzero(quiet):
            if _kkt_worst(hs[i], cs[i], beta[i], float(al[i]), ok[i]) <= bar:
                finish[i] = True
                success[i] = True
            elif stall[i] >= 3:
                # fixed point that cannot certify; one direct rescue, then give up
                cand = _direct_solve(hs[i], cs[i], float(al[i]), beta[i], ok[i], bar)
                if cand is not None:
                    beta[i] = cand
                    success[i] = True
                finish[i] = True

        if sweeps >= next_polish and live.size:
            next_polish *= 2
            for i in range(live.size):
                if finish[i]:
                    continue
                cand = _direct_solve(hs[i], cs[i], float(al[i]), beta[i], ok[i], bar)
                if cand is not None:
                    beta[i] = cand
                    finish[i] = True
                    success[i] = True

        if finish.any():
            for i in np.flatnonzero(finish):
                gi = live[i]
                beta_out[gi] = beta[i]
                done[gi] = success[i]
            keep = ~finish
            live = live[keep]
            hs = hs[keep]
            cs = cs[keep]
            hd = hd[keep]
            ok = ok[keep]
            yss = yss[keep]
            al = al[keep]
            beta = beta[keep]
            q = np.einsum("fpq,fq->fp", hs, beta)
            stall = stall[keep]

    for i, gi in enumerate(live):
        beta_out[gi] = beta[i]
    return beta_out, sweeps, bool(done.all())


# ---------------------------------------------------------------------------
# single fits


@dataclass
class LassoFit:
    """One converged fit, reported on the original data scale."""

    alpha: float
    beta: np.ndarray
    intercept: float
    beta_std: np.ndarray
    column_mean: np.ndarray
    column_scale: np.ndarray
    column_ok: np.ndarray
    y_mean: float
    n_sweeps: int
    converged: bool
    objective: float
    kkt_violation: float
    objective_history: tuple[float, ...] = ()

    @property
    def support(self) -> np.ndarray:
        return np.flatnonzero(self.beta_std)

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=float) @ self.beta


def _single_problem(x: np.ndarray, y: np.ndarray) -> _Problems:
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2:
        raise RegressError("X must be 2-d")
    if len(y) != x.shape[0]:
        raise RegressError("X and y row counts differ")
    masks = np.ones((1, x.shape[0]), dtype=bool)
    return _standardize_problems(x, y, masks)


def lasso_fit(
    x: np.ndarray,
    y: np.ndarray,
    alpha: float,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    track_objective: bool = False,
) -> LassoFit:
    """Fit (1/n)||y - Xb||^2 + alpha||b||_1 and report on the input scale.

    Columns are standardised internally and y is centred; at or above the
    smallest alpha that zeroes every coordinate the returned beta is exactly
    zero, not merely small.
    """
    if alpha < 0:
        raise RegressError("alpha must be nonnegative")
    pr = _single_problem(x, y)
    hist: list[float] | None = [] if track_objective else None
    beta_std, sweeps, converged = _cd_solve(
        pr, alpha, tol=tol, max_sweeps=max_sweeps, history=hist
    )
    if not converged:
        logger.warning("lasso did not fully converge in %d sweeps (alpha=%g)", sweeps, alpha)
    b = beta_std[0]
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    xs = (x - pr.mu[0]) / pr.sigma[0]
    xs[:, ~pr.ok[0]] = 0.0
    yc = y - pr.ybar[0]
    obj = lasso_objective(xs, yc, b, alpha)
    beta_orig = np.where(pr.ok[0], b / pr.sigma[0], 0.0)
    intercept = float(pr.ybar[0] - beta_orig @ pr.mu[0])
    return LassoFit(
        alpha=float(alpha),
        beta=beta_orig,
        intercept=intercept,
        beta_std=b,
        column_mean=pr.mu[0],
        column_scale=pr.sigma[0],
        column_ok=pr.ok[0],
        y_mean=float(pr.ybar[0]),
        n_sweeps=sweeps,
        converged=converged,
        objective=obj,
        kkt_violation=float(_kkt_violation(pr, beta_std, np.asarray([alpha]))[0]),
        objective_history=tuple(hist) if hist is not None else (),
    )


def kkt_certificate(x: np.ndarray, y: np.ndarray, fit: LassoFit) -> float:
    """Re-derive the worst KKT violation for a fit, from the data alone."""
    pr = _single_problem(x, y)
    return float(_kkt_violation(pr, fit.beta_std[None, :], np.asarray([fit.alpha]))[0])


# ---------------------------------------------------------------------------
# the alpha grid


@dataclass(frozen=True)
class AlphaGrid:
    alphas: tuple[float, ...]  # descending
    alpha_max: float
    count: int
    ratio: float


def alpha_grid(x: np.ndarray, y: np.ndarray, count: int = 100, ratio: float = 1e-4) -> AlphaGrid:
    """Log-spaced alphas from alpha_max down to ratio * alpha_max.

    alpha_max = max_j |(2/n) x_j'y| on the standardised problem: the
    smallest penalty whose solution is identically zero.
    """
    if count < 1:
        raise RegressError("alpha grid needs at least one point")
    if not 0.0 < ratio <= 1.0:
        raise RegressError("ratio must be in (0, 1]")
    pr = _single_problem(x, y)
    if pr.yss[0] <= 1e-18 * (pr.ybar[0] ** 2 + 1.0):
        raise RegressError("degenerate target: zero variance, correlations vanish")
    amax = 2.0 * float(np.abs(pr.cs[0]).max())
    if amax <= 0.0:
        raise RegressError("degenerate inputs: all correlations vanish (constant target?)")
    if count == 1:
        alphas = (amax,)
    else:
        expo = np.arange(count) / (count - 1)
        alphas = tuple(float(a) for a in amax * ratio**expo)
    return AlphaGrid(alphas=alphas, alpha_max=amax, count=count, ratio=ratio)


# ---------------------------------------------------------------------------
# cross validation


@dataclass(frozen=True)
class CvPlan:
    """Fold assignments for repeated k-fold CV, fixed by a seed."""

    folds: int
    repeats: int
    seed: int
    assignments: np.ndarray  # (repeats, n) fold index per row

    @property
    def n(self) -> int:
        return self.assignments.shape[1]


def make_cv_plan(n: int, folds: int = 5, repeats: int = 30, seed: int = 0) -> CvPlan:
    if n < folds:
        raise RegressError(f"cannot split {n} rows into {folds} folds")
    if folds < 2:
        raise RegressError("need at least 2 folds")
    rng = np.random.default_rng(seed)
    a = np.empty((repeats, n), dtype=np.int64)
    base = np.empty(n, dtype=np.int64)
    sizes = [n // folds + (1 if r < n % folds else 0) for r in range(folds)]
    pos = 0
    for r, s in enumerate(sizes):
        base[pos : pos + s] = r
        pos += s
    for rep in range(repeats):
        perm = rng.permutation(n)
        a[rep, perm] = base
    return CvPlan(folds=folds, repeats=repeats, seed=seed, assignments=a)


def _masks_from_plan(plan: CvPlan) -> np.ndarray:
    """Training masks, one row per (repeat, fold) problem, repeat-major."""
    masks = np.empty((plan.repeats * plan.folds, plan.n), dtype=bool)
    for rep in range(plan.repeats):
        for k in range(plan.folds):
            masks[rep * plan.folds + k] = plan.assignments[rep] != k
    return masks


def _padded_tests(
    x: np.ndarray, y: np.ndarray, masks: np.ndarray, pr: _Problems
) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
    """Standardised held-out blocks per problem, zero-padded to equal size."""
    f = masks.shape[0]
    p = x.shape[1]
    sizes = (~masks).sum(axis=1)
    t_max = int(sizes.max())
    xt = np.zeros((f, t_max, p))
    yt = np.zeros((f, t_max))
    w = np.zeros((f, t_max))
    for i in range(f):
        idx = np.flatnonzero(~masks[i])
        blk = (x[idx] - pr.mu[i]) / pr.sigma[i]
        blk[:, ~pr.ok[i]] = 0.0
        xt[i, : len(idx)] = blk
        yt[i, : len(idx)] = y[idx]
        w[i, : len(idx)] = 1.0
    return xt, yt, w


def select_alpha(
    x: np.ndarray,
    y: np.ndarray,
    grid: AlphaGrid,
    plan: CvPlan,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> tuple[float, tuple[tuple[float, float, int], ...]]:
    """Pick the alpha with the best mean out-of-fold R^2 across repeats.

    Each repeat's R^2 is 1 - SSE/SST over that repeat's full out-of-fold
    prediction vector. Exact ties go to the larger alpha (sparser model).
    Repeats with an undefined score are dropped and logged.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if plan.n != len(y):
        raise RegressError("CV plan row count does not match the data")
    masks = _masks_from_plan(plan)
    pr = _standardize_problems(x, y, masks)
    xt, yt, wt = _padded_tests(x, y, masks, pr)
    sst = float(((y - y.mean()) ** 2).sum())
    if sst == 0.0:
        raise RegressError("constant target: cross validation undefined")

    beta = np.zeros((masks.shape[0], x.shape[1]))
    rows: list[tuple[float, float, int]] = []
    best_alpha = grid.alphas[0]
    best_score = -np.inf
    for a in grid.alphas:
        beta, _, _ = _cd_solve(pr, a, beta0=beta, tol=tol, max_sweeps=max_sweeps)
        pred = np.einsum("ftp,fp->ft", xt, beta) + pr.ybar[:, None]
        sse_f = (((pred - yt) * wt) ** 2).sum(axis=1)
        sse_rep = sse_f.reshape(plan.repeats, plan.folds).sum(axis=1)
        r2 = 1.0 - sse_rep / sst
        good = np.isfinite(r2)
        if not good.all():
            logger.warning("dropped %d undefined CV repeats at alpha=%g", int((~good).sum()), a)
        used = int(good.sum())
        score = float(r2[good].mean()) if used else -np.inf
        rows.append((float(a), score, used))
        if score > best_score:
            best_score = score
            best_alpha = float(a)
    return best_alpha, tuple(rows)


# ---------------------------------------------------------------------------
# OLS refit and leave-one-out evaluation


@dataclass
class OlsFit:
    coef: np.ndarray
    intercept: float
    used_ridge: bool

    def predict(self, x: np.ndarray) -> np.ndarray:
        return self.intercept + np.asarray(x, dtype=float) @ self.coef


def ols_refit(x: np.ndarray, y: np.ndarray) -> OlsFit:
    """Least squares with intercept on the selected columns.

    Rank-deficient systems fall back to a tiny ridge penalty, logged, so the
    refit never silently explodes.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    if x.ndim != 2 or x.shape[1] == 0:
        return OlsFit(coef=np.zeros(0), intercept=float(np.mean(y)), used_ridge=False)
    a = np.column_stack([np.ones(len(y)), x])
    sol, _, rank, _ = np.linalg.lstsq(a, y, rcond=None)
    used_ridge = False
    if rank < a.shape[1]:
        lam = 1e-10 * float(np.trace(a.T @ a)) / a.shape[1]
        sol = np.linalg.solve(a.T @ a + lam * np.eye(a.shape[1]), a.T @ y)
        used_ridge = True
        logger.warning("OLS refit rank deficient (rank %d < %d); ridge fallback", rank, a.shape[1])
    return OlsFit(coef=sol[1:], intercept=float(sol[0]), used_ridge=used_ridge)


def normalized_coefficients(beta: dict[str, float]) -> tuple[tuple[str, float], ...]:
    """beta_i / ||beta||_1 per selected variable, sorted by descending value."""
    l1 = sum(abs(v) for v in beta.values())
    if l1 == 0.0:
        raise RegressError("cannot normalise an all-zero coefficient vector")
    items = [(k, v / l1) for k, v in beta.items() if v != 0.0]
    items.sort(key=lambda kv: (-kv[1], kv[0]))
    return tuple(items)


def _loo_ols_predictions(x: np.ndarray, y: np.ndarray, supports) -> np.ndarray:
    """One prediction per row from an OLS refit without that row.

    `supports` is either one index array shared by all rows (selection fixed
    from the full fit) or a list with one index array per row (selection
    re-run without that row).
    """
    n = len(y)
    preds = np.empty(n)
    shared = isinstance(supports, np.ndarray)
    for i in range(n):
        sup = supports if shared else supports[i]
        keep = np.arange(n) != i
        if len(sup) == 0:
            preds[i] = float(y[keep].mean())
            continue
        fit = ols_refit(x[np.ix_(keep, sup)], y[keep])
        preds[i] = float(fit.predict(x[i, sup][None, :])[0])
    return preds


def loocv_r2(
    x: np.ndarray,
    y: np.ndarray,
    alpha: float,
    support: np.ndarray,
    policy: str = "fixed",
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
) -> tuple[float, np.ndarray]:
    """Leave-one-out R^2 of the select-then-OLS model.

    policy "fixed" keeps the variable selection from the full-data fit;
    policy "nested" re-runs the lasso selection at the same alpha on each
    leave-one-out training set before the OLS refit. R^2 may be negative.
    """
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n = len(y)
    if n < 3:
        raise RegressError("leave-one-out evaluation needs at least 3 rows")
    if policy == "fixed":
        preds = _loo_ols_predictions(x, y, np.asarray(support, dtype=int))
    elif policy == "nested":
        masks = ~np.eye(n, dtype=bool)
        pr = _standardize_problems(x, y, masks)
        beta, _, _ = _cd_solve(pr, alpha, tol=tol, max_sweeps=max_sweeps)
        supports = [np.flatnonzero(beta[i]) for i in range(n)]
        preds = _loo_ols_predictions(x, y, supports)
    else:
        raise RegressError(f"unknown LOOCV policy {policy!r}")
    return r_squared(y, preds), preds


# ---------------------------------------------------------------------------
# whole-model evaluation


@dataclass
class EvaluationReport:
    """Everything the reports need about one fitted age model."""

    model_id: str
    n_units: int
    f_before_selection: int
    alpha: float
    alpha_max: float
    selected: tuple[str, ...]
    beta: dict[str, float]
    intercept: float
    ols_beta: dict[str, float]
    ols_intercept: float
    normalized_coefficients: tuple[tuple[str, float], ...]
    coefficient_source: str
    r2_loocv: float
    r2_loocv_nested: float
    row_ids: tuple[str, ...]
    predictions_loocv: tuple[float, ...]
    predictions_loocv_nested: tuple[float, ...]
    cv_table: tuple[tuple[float, float, int], ...]
    seed: int
    converged: bool

    def summary_dict(self) -> dict:
        return {
            "model": self.model_id,
            "n_units": self.n_units,
            "features": self.f_before_selection,
            "selected": len(self.selected),
            "alpha": self.alpha,
            "r2_loocv": self.r2_loocv,
            "r2_loocv_nested": self.r2_loocv_nested,
        }


def evaluate_model(
    x: np.ndarray,
    y: np.ndarray,
    col_names: tuple[str, ...],
    row_ids: tuple[str, ...],
    model_id: str,
    seed: int = 0,
    alpha_count: int = 100,
    alpha_ratio: float = 1e-4,
    cv_folds: int = 5,
    cv_repeats: int = 30,
    tol: float = DEFAULT_TOL,
    max_sweeps: int = DEFAULT_MAX_SWEEPS,
    coefficient_source: str = "lasso",
) -> EvaluationReport:
    """Run the whole protocol on one design matrix.

    Grid, repeated-CV alpha choice, final fit, OLS refit on the support, and
    both leave-one-out policies.
    """
    if coefficient_source not in ("lasso", "ols"):
        raise RegressError(f"unknown coefficient source {coefficient_source!r}")
    x = np.asarray(x, dtype=float)
    y = np.asarray(y, dtype=float)
    n, p = x.shape
    grid = alpha_grid(x, y, count=alpha_count, ratio=alpha_ratio)
    plan = make_cv_plan(n, folds=cv_folds, repeats=cv_repeats, seed=seed)
    alpha_star, cv_table = select_alpha(x, y, grid, plan, tol=tol, max_sweeps=max_sweeps)
    fit = lasso_fit(x, y, alpha_star, tol=tol, max_sweeps=max_sweeps)
    support = fit.support

    if len(support) == 0:
        logger.warning("model %s selected nothing at alpha=%g; null model", model_id, alpha_star)
        ols = OlsFit(coef=np.zeros(0), intercept=float(y.mean()), used_ridge=False)
    else:
        ols = ols_refit(x[:, support], y)

    r2_fixed, preds_fixed = loocv_r2(x, y, alpha_star, support, policy="fixed", tol=tol, max_sweeps=max_sweeps)
    r2_nested, preds_nested = loocv_r2(x, y, alpha_star, support, policy="nested", tol=tol, max_sweeps=max_sweeps)

    beta_map = {col_names[j]: float(fit.beta[j]) for j in support}
    ols_map = {col_names[j]: float(c) for j, c in zip(support, ols.coef)}
    source_map = beta_map if coefficient_source == "lasso" else ols_map
    norm = normalized_coefficients(source_map) if source_map else ()

    return EvaluationReport(
        model_id=model_id,
        n_units=n,
        f_before_selection=p,
        alpha=float(alpha_star),
        alpha_max=grid.alpha_max,
        selected=tuple(col_names[j] for j in support),
        beta=beta_map,
        intercept=fit.intercept,
        ols_beta=ols_map,
        ols_intercept=ols.intercept,
        normalized_coefficients=norm,
        coefficient_source=coefficient_source,
        r2_loocv=r2_fixed,
        r2_loocv_nested=r2_nested,
        row_ids=tuple(row_ids),
        predictions_loocv=tuple(float(v) for v in preds_fixed),
        predictions_loocv_nested=tuple(float(v) for v in preds_nested),
        cv_table=cv_table,
        seed=seed,
        converged=fit.converged,
    )
