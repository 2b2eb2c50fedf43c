"""Backward recursions, feasibility test, saddle-point gains, optimal value.

Two decoupled Riccati-type recursions drive everything: one on the
follower deviation system (lx) and one on the augmented [leader; mean]
system (2lx).  Backward from t = T with zero terminal weight:

    Delta_t = I + B R^{-1} B' M_{t+1} - gamma^{-2} M_{t+1}
    M_t     = Q + A' M_{t+1} Delta_t^{-1} A

A finite saddle point exists iff gamma^2 I - M_{t+1} is positive definite
at every step (the inner maximization stays strictly concave); margins are
the smallest eigenvalues of those tests.  When the test fails the
recursion still runs, flagged, so the margin profile is reportable.
"""

from __future__ import annotations

import csv
import io
import warnings
from dataclasses import dataclass

import numpy as np

from .model import ModelSpec, build_augmented, validate_convexity

__all__ = [
    "InfeasibleError",
    "RiccatiSolution",
    "StrategyGains",
    "solve_riccati",
    "compute_gains",
    "optimal_value",
    "critical_gamma",
    "riccati_csv",
]

# Strict-PD margin for gamma^2 I - M (feasibility) and symmetry guard.
FEAS_TOL = 1e-10
SYM_TOL = 1e-10


class InfeasibleError(RuntimeError):
    """No finite saddle point at this attenuation level."""

    def __init__(self, message: str, solution: "RiccatiSolution" = None):
        super().__init__(message)
        self.solution = solution


@dataclass(frozen=True)
class RiccatiSolution:
    """Backward-recursion output for both subsystems, t = 1..T+1.

    M stacks have T+1 entries (index [t-1]; the last is the zero terminal
    matrix), Delta stacks and margins have T entries.  c_brev is stored
    once (identical across followers for i.i.d. noise).
    """

    gamma: float
    M_brev: np.ndarray       # (T+1, lx, lx)
    M_bar: np.ndarray        # (T+1, 2lx, 2lx)
    Delta_brev: np.ndarray   # (T, lx, lx)
    Delta_bar: np.ndarray    # (T, 2lx, 2lx)
    c_brev: np.ndarray       # (T+1,)
    c_bar: np.ndarray        # (T+1,)
    feasible: bool
    margin_brev: np.ndarray  # (T,) min eig of gamma^2 I - M_brev[t+1]
    margin_bar: np.ndarray   # (T,)
    infeasible_times: tuple = ()

    def min_margin(self) -> float:
        return float(min(self.margin_brev.min(), self.margin_bar.min()))


@dataclass(frozen=True)
class StrategyGains:
    """Feedback gains of the saddle point, t = 1..T (index [t-1]).

    L_bar rows split into leader-action and mean-action blocks; K gains
    are the worst-case disturbance feedbacks on the deviation and
    augmented states.
    """

    L_brev: np.ndarray  # (T, lu, lx)
    L_bar: np.ndarray   # (T, 2lu, 2lx)
    K_brev: np.ndarray  # (T, lx, lx)
    K_bar: np.ndarray   # (T, 2lx, 2lx)
    state_dim: int
    action_dim: int

    def l11(self, t: int) -> np.ndarray:
        return self.L_bar[t - 1, : self.action_dim, : self.state_dim]

    def l12(self, t: int) -> np.ndarray:
        return self.L_bar[t - 1, : self.action_dim, self.state_dim :]

    def l21(self, t: int) -> np.ndarray:
        return self.L_bar[t - 1, self.action_dim :, : self.state_dim]

    def l22(self, t: int) -> np.ndarray:
        return self.L_bar[t - 1, self.action_dim :, self.state_dim :]


def _backward(A, B, Q, R, gamma: float):
    """Run one soft-constrained recursion; never raises on infeasibility."""
    T, dim = A.shape[0], A.shape[1]
    M = np.zeros((T + 1, dim, dim))
    Delta = np.zeros((T, dim, dim))
    margins = np.zeros(T)
    bad_times = []
    eye = np.eye(dim)
    g2 = gamma * gamma
    for t in range(T, 0, -1):
        Mn = M[t]  # M_{t+1} lives at index t
        margins[t - 1] = np.min(np.linalg.eigvalsh(g2 * eye - Mn))
        if margins[t - 1] <= FEAS_TOL:
            bad_times.append(t)
        BRB = B[t - 1] @ np.linalg.solve(R[t - 1], B[t - 1].T)
        D = eye + (BRB - eye / g2) @ Mn
        try:
            MD = Mn @ np.linalg.inv(D)
        except np.linalg.LinAlgError:
            # Singular Delta: continue on the pseudo-inverse, flagged.
            bad_times.append(t)
            MD = Mn @ np.linalg.pinv(D)
        Mt = Q[t - 1] + A[t - 1].T @ MD @ A[t - 1]
        asym = np.max(np.abs(Mt - Mt.T))
        Mt = (Mt + Mt.T) / 2.0
        if asym > SYM_TOL * max(1.0, np.max(np.abs(Mt))):
            bad_times.append(t)
        M[t - 1] = Mt
        Delta[t - 1] = D
    return M, Delta, margins, sorted(set(bad_times))


def solve_riccati(model: ModelSpec) -> RiccatiSolution:
    """Both backward recursions plus the noise constants and margins."""
    report = validate_convexity(model)
    if not report.ok:
        raise InfeasibleError(f"convexity assumptions violated: {report.violations[:4]}")
    aug = build_augmented(model)
    T, n, lx = model.horizon, model.n_followers, model.state_dim
    Mb, Db, marg_b, bad_b = _backward(model.A, model.B, model.Q, model.R, model.gamma)
    MB, DB, marg_B, bad_B = _backward(aug.A_bar, aug.B_bar, aug.Q_bar, aug.R_bar, model.gamma)

    # Noise constants.  The deviation noise w^i - wbar has covariance
    # (1 - 1/n) Cov(w^i); the stacked [w0; wbar] covariance is block
    # diagonal with Cov(w^i)/n in the mean block (i.i.d. followers).
    c_brev = np.zeros(T + 1)
    c_bar = np.zeros(T + 1)
    for t in range(T, 0, -1):
        cov_dev = (1.0 - 1.0 / n) * model.noise_follower[t - 1]
        c_brev[t - 1] = c_brev[t] + float(np.trace(Mb[t] @ cov_dev))
        cov_aug = np.zeros((2 * lx, 2 * lx))
        cov_aug[:lx, :lx] = model.noise_leader[t - 1]
        cov_aug[lx:, lx:] = model.noise_follower[t - 1] / n
        c_bar[t - 1] = c_bar[t] + float(np.trace(MB[t] @ cov_aug))

    bad = sorted(set(bad_b) | set(bad_B))
    return RiccatiSolution(
        gamma=model.gamma, M_brev=Mb, M_bar=MB, Delta_brev=Db, Delta_bar=DB,
        c_brev=c_brev, c_bar=c_bar, feasible=not bad,
        margin_brev=marg_b, margin_bar=marg_B, infeasible_times=tuple(bad),
    )


def compute_gains(model: ModelSpec, ric: RiccatiSolution) -> StrategyGains:
    """Control gains and worst-case disturbance gains from the recursions."""
    if not ric.feasible:
        raise InfeasibleError(
            f"no saddle point at gamma={ric.gamma:g}: "
            f"margin {ric.min_margin():.3g} at t in {list(ric.infeasible_times)[:6]}",
            solution=ric,
        )
    aug = build_augmented(model)
    T, lx, lu = model.horizon, model.state_dim, model.action_dim
    g2 = model.gamma ** 2
    L_brev = np.zeros((T, lu, lx))
    L_bar = np.zeros((T, 2 * lu, 2 * lx))
    K_brev = np.zeros((T, lx, lx))
    K_bar = np.zeros((T, 2 * lx, 2 * lx))
    for t in range(1, T + 1):
        MDA = ric.M_brev[t] @ np.linalg.solve(ric.Delta_brev[t - 1], model.A[t - 1])
        L_brev[t - 1] = -np.linalg.solve(model.R[t - 1], model.B[t - 1].T @ MDA)
        K_brev[t - 1] = MDA / g2
        MDA_bar = ric.M_bar[t] @ np.linalg.solve(ric.Delta_bar[t - 1], aug.A_bar[t - 1])
        L_bar[t - 1] = -np.linalg.solve(aug.R_bar[t - 1], aug.B_bar[t - 1].T @ MDA_bar)
        K_bar[t - 1] = MDA_bar / g2
    return StrategyGains(L_brev=L_brev, L_bar=L_bar, K_brev=K_brev, K_bar=K_bar,
                         state_dim=lx, action_dim=lu)


def optimal_value(model: ModelSpec, ric: RiccatiSolution) -> float:
    """Saddle-point performance from the initial second moments.

    Uses E[zz'] = Cov(z) + mean mean' throughout; for i.i.d. follower
    initials the deviation from the sample mean has zero mean and
    covariance (1 - 1/n) Cov(x^i_1), while a deterministic population
    list contributes its empirical deviation second moment.
    """
    if not ric.feasible:
        raise InfeasibleError(
            f"optimal value undefined at gamma={ric.gamma:g} (margin {ric.min_margin():.3g})",
            solution=ric,
        )
    n, lx = model.n_followers, model.state_dim
    finit = model.follower_init
    if finit.kind == "deterministic":
        vals = np.atleast_2d(finit.values)
        if vals.shape[0] == 1:
            vals = np.broadcast_to(vals[0], (n, lx))
        dev = vals - vals.mean(axis=0)
        dev_sm = dev.T @ dev / n
        mean_cov = np.zeros((lx, lx))
    else:
        dev_sm = (1.0 - 1.0 / n) * finit.cov()
        mean_cov = finit.cov() / n
    value = float(np.trace(ric.M_brev[0] @ dev_sm)) + float(ric.c_brev[0])

    mu = np.concatenate([model.leader_init.mean(), finit.mean()])
    cov = np.zeros((2 * lx, 2 * lx))
    cov[:lx, :lx] = model.leader_init.cov()
    cov[lx:, lx:] = mean_cov
    second = cov + np.outer(mu, mu)
    value += float(np.trace(ric.M_bar[0] @ second)) + float(ric.c_bar[0])
    return value


def critical_gamma(model: ModelSpec, gamma_lo: float, gamma_hi: float, tol: float = 1e-6) -> float:
    """Bisect the feasibility boundary between an infeasible and a feasible gamma.

    Requires infeasibility at gamma_lo and feasibility at gamma_hi; the
    observed (gamma, feasible) evaluations are checked for monotonicity
    and a warning is emitted if an inversion shows up.
    """
    if tol <= 0:
        raise ValueError("tol must be positive")

    def feasible(g: float) -> bool:
        return solve_riccati(model.with_gamma(g)).feasible

    lo_ok, hi_ok = feasible(gamma_lo), feasible(gamma_hi)
    if lo_ok or not hi_ok:
        raise ValueError(
            f"bisection bracket invalid: feasible(gamma_lo={gamma_lo:g})={lo_ok}, "
            f"feasible(gamma_hi={gamma_hi:g})={hi_ok}"
        )
    seen = [(gamma_lo, lo_ok), (gamma_hi, hi_ok)]
    lo, hi = gamma_lo, gamma_hi
    while hi - lo > tol:
        mid = 0.5 * (lo + hi)
        ok = feasible(mid)
        seen.append((mid, ok))
        if ok:
            hi = mid
        else:
            lo = mid
    seen.sort()
    flips = sum(1 for (_, a), (_, b) in zip(seen, seen[1:]) if a and not b)
    if flips:
        warnings.warn("feasibility is not monotone in gamma on the evaluated points", stacklevel=2)
    return 0.5 * (lo + hi)


def riccati_csv(ric: RiccatiSolution, gains: StrategyGains | None = None) -> str:
    """Long-format dump (t, matrix, row, col, value) for golden-file diffs."""
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["t", "matrix", "row", "col", "value"])

    def emit(name: str, stack: np.ndarray, t0: int = 1):
        for t in range(stack.shape[0]):
            mat = np.atleast_2d(stack[t])
            for i in range(mat.shape[0]):
                for j in range(mat.shape[1]):
                    writer.writerow([t + t0, name, i, j, repr(float(mat[i, j]))])

    emit("M_brev", ric.M_brev)
    emit("M_bar", ric.M_bar)
    emit("Delta_brev", ric.Delta_brev)
    emit("Delta_bar", ric.Delta_bar)
    emit("c_brev", ric.c_brev.reshape(-1, 1, 1))
    emit("c_bar", ric.c_bar.reshape(-1, 1, 1))
    emit("margin_brev", ric.margin_brev.reshape(-1, 1, 1))
    emit("margin_bar", ric.margin_bar.reshape(-1, 1, 1))
    if gains is not None:
        emit("L_brev", gains.L_brev)
        emit("L_bar", gains.L_bar)
        emit("K_brev", gains.K_brev)
        emit("K_bar", gains.K_bar)
    return buf.getvalue()
