"""Independent verification against the full joint problem.

Everything here deliberately avoids the deviation/aggregate change of
coordinates: the joint state is the raw stack [x0; x1; ...; xn], the
backward minmax recursion solves the joint stage stationarity system
directly, and costs are accumulated from the raw per-agent sum.  Agreement
with the decomposed synthesis is therefore evidence, not tautology.
"""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field, replace

import numpy as np

from .model import InfoStructure, ModelSpec
from .sim import DisturbancePolicy, SimConfig, evaluate_cost, simulate
from .synthesis import StrategyGains

__all__ = [
    "StackedProblem",
    "StackedSolution",
    "SaddleReport",
    "build_stacked",
    "stacked_saddle_solve",
    "decomposed_joint_gains",
    "rollout_joint",
    "saddle_check",
    "verify_equivalence",
    "imfs_gap_study",
    "saddle_report_csv",
    "gap_table_csv",
]

MAX_ORACLE_FOLLOWERS = 4


@dataclass(frozen=True)
class StackedProblem:
    """Joint system on the stacked (n+1)-agent state.

    AA/BB are (T, N, N)/(T, N, Nu) transition stacks with N = (n+1) lx;
    QQ/RR the joint quadratic weights; Wd the diagonal disturbance-penalty
    weight (leader channel 1, each follower channel 1/n).
    """

    n: int
    AA: np.ndarray
    BB: np.ndarray
    QQ: np.ndarray
    RR: np.ndarray
    Wd: np.ndarray
    noise_cov: np.ndarray  # (T, N, N)


@dataclass(frozen=True)
class StackedSolution:
    KU: np.ndarray        # (T, Nu, N) joint control feedback
    KD: np.ndarray        # (T, N, N) joint disturbance feedback
    M1: np.ndarray        # (N, N) joint value matrix at t=1
    c1: float
    feasible: bool
    margin_control: float     # min eig of the control Hessian block over t
    margin_disturbance: float  # min eig of gamma^2 Wd - M over t

    def value(self, x0: np.ndarray, followers: np.ndarray) -> float:
        """Deterministic-initials value x1' M1 x1 + c1."""
        x1 = np.concatenate([np.atleast_1d(x0), np.asarray(followers, dtype=float).ravel()])
        return float(x1 @ self.M1 @ x1 + self.c1)


@dataclass
class SaddleReport:
    value_gap: float = float("nan")
    max_gain_discrepancy: float = float("nan")
    base_cost: float = float("nan")
    perturbations: list = field(default_factory=list)  # (side, index, step, delta)
    control_min_delta: float = float("nan")
    disturbance_max_delta: float = float("nan")
    ok: bool = False


def build_stacked(model: ModelSpec, n: int) -> StackedProblem:
    """Assemble the joint matrices from the raw dynamics and cost."""
    if n < 1:
        raise ValueError("n must be >= 1")
    if n > MAX_ORACLE_FOLLOWERS:
        raise ValueError(f"oracle capped at n <= {MAX_ORACLE_FOLLOWERS} followers")
    T, lx, lu = model.horizon, model.state_dim, model.action_dim
    N, Nu = (n + 1) * lx, (n + 1) * lu
    AA = np.zeros((T, N, N))
    BB = np.zeros((T, N, Nu))
    QQ = np.zeros((T, N, N))
    RR = np.zeros((T, Nu, Nu))
    Wd = np.zeros((N, N))
    noise = np.zeros((T, N, N))

    def xs(i):  # state slice of agent i (0 = leader)
        return slice(i * lx, (i + 1) * lx)

    def us(i):
        return slice(i * lu, (i + 1) * lu)

    Wd[xs(0), xs(0)] = np.eye(lx)
    for i in range(1, n + 1):
        Wd[xs(i), xs(i)] = np.eye(lx) / n

    for t in range(T):
        AA[t, xs(0), xs(0)] = model.A0[t]
        BB[t, xs(0), us(0)] = model.B0[t]
        QQ[t, xs(0), xs(0)] = model.Q0[t] + model.F[t]
        RR[t, us(0), us(0)] = model.R0[t]
        noise[t, xs(0), xs(0)] = model.noise_leader[t]
        for i in range(1, n + 1):
            AA[t, xs(0), xs(i)] += model.S0[t] / n
            AA[t, xs(i), xs(0)] = model.E[t]
            AA[t, xs(i), xs(i)] += model.A[t]
            BB[t, xs(i), us(i)] = model.B[t]
            QQ[t, xs(0), xs(i)] += -model.F[t] / n
            QQ[t, xs(i), xs(0)] += -model.F[t] / n
            QQ[t, xs(i), xs(i)] += model.Q[t] / n
            RR[t, us(i), us(i)] += model.R[t] / n
            noise[t, xs(i), xs(i)] = model.noise_follower[t]
            for j in range(1, n + 1):
                AA[t, xs(i), xs(j)] += model.S[t] / n
                QQ[t, xs(i), xs(j)] += (model.F[t] + model.P[t]) / n**2
                RR[t, us(i), us(j)] += model.H[t] / n**2
    return StackedProblem(n=n, AA=AA, BB=BB, QQ=QQ, RR=RR, Wd=Wd, noise_cov=noise)


def stacked_saddle_solve(model: ModelSpec, n: int) -> StackedSolution:
    """Backward joint minmax recursion on the stacked state.

    At each step the joint stage quadratic is optimized by solving the
    stationarity linear system in (U, D); the Hessian signature (control
    block positive definite, disturbance block negative definite) is
    verified and failure marks the solution infeasible.
    """
    prob = build_stacked(model, n)
    T = model.horizon
    N, Nu = prob.AA.shape[1], prob.BB.shape[2]
    g2 = model.gamma ** 2
    M = np.zeros((N, N))
    c = 0.0
    KU = np.zeros((T, Nu, N))
    KD = np.zeros((T, N, N))
    feasible = True
    margin_u, margin_d = np.inf, np.inf
    for t in range(T, 0, -1):
        AA, BB = prob.AA[t - 1], prob.BB[t - 1]
        Huu = prob.RR[t - 1] + BB.T @ M @ BB
        Hdd = M - g2 * prob.Wd
        margin_u = min(margin_u, float(np.min(np.linalg.eigvalsh(Huu))))
        margin_d = min(margin_d, float(np.min(np.linalg.eigvalsh(-Hdd))))
        if np.min(np.linalg.eigvalsh(Huu)) <= 0 or np.max(np.linalg.eigvalsh(Hdd)) >= 0:
            feasible = False
        H = np.block([[Huu, BB.T @ M], [M @ BB, Hdd]])
        rhs = -np.vstack([BB.T @ M @ AA, M @ AA])
        try:
            K = np.linalg.solve(H, rhs)
        except np.linalg.LinAlgError:
            feasible = False
            K = np.linalg.lstsq(H, rhs, rcond=None)[0]
        KU[t - 1], KD[t - 1] = K[:Nu], K[Nu:]
        Phi = AA + BB @ KU[t - 1] + KD[t - 1]
        c += float(np.trace(M @ prob.noise_cov[t - 1]))
        M = (prob.QQ[t - 1] + KU[t - 1].T @ prob.RR[t - 1] @ KU[t - 1]
             - g2 * KD[t - 1].T @ prob.Wd @ KD[t - 1] + Phi.T @ M @ Phi)
        M = (M + M.T) / 2.0
    return StackedSolution(KU=KU, KD=KD, M1=M, c1=c, feasible=feasible,
                           margin_control=margin_u, margin_disturbance=margin_d)


def decomposed_joint_gains(model: ModelSpec, gains: StrategyGains, n: int):
    """Map the decomposed feedback to joint-state gain matrices.

    The induced joint feedback is linear in the stack, so the decomposed
    strategy is directly comparable, entry by entry, with the joint
    recursion's unique saddle-point gains.
    """
    T, lx, lu = model.horizon, model.state_dim, model.action_dim
    N, Nu = (n + 1) * lx, (n + 1) * lu
    KU = np.zeros((T, Nu, N))
    KD = np.zeros((T, N, N))
    for t in range(1, T + 1):
        L = gains.L_brev[t - 1]
        K = gains.K_brev[t - 1]
        l11, l12, l21, l22 = gains.l11(t), gains.l12(t), gains.l21(t), gains.l22(t)
        kb = gains.K_bar[t - 1]
        k11, k12 = kb[:lx, :lx], kb[:lx, lx:]
        k21, k22 = kb[lx:, :lx], kb[lx:, lx:]
        KU[t - 1, :lu, :lx] = l11
        KD[t - 1, :lx, :lx] = k11
        for j in range(1, n + 1):
            KU[t - 1, :lu, j * lx:(j + 1) * lx] = l12 / n
            KD[t - 1, :lx, j * lx:(j + 1) * lx] = k12 / n
        for i in range(1, n + 1):
            KU[t - 1, i * lu:(i + 1) * lu, :lx] = l21
            KD[t - 1, i * lx:(i + 1) * lx, :lx] = k21
            for j in range(1, n + 1):
                KU[t - 1, i * lu:(i + 1) * lu, j * lx:(j + 1) * lx] = (l22 - L) / n + (L if i == j else 0.0)
                KD[t - 1, i * lx:(i + 1) * lx, j * lx:(j + 1) * lx] = (k22 - K) / n + (K if i == j else 0.0)
    return KU, KD


def rollout_joint(model: ModelSpec, n: int, KU: np.ndarray, KD: np.ndarray,
                  x0_init: np.ndarray, followers_init: np.ndarray):
    """Noise-free closed loop under joint feedback; raw cost accounting.

    Returns (total cost, trajectory (T, N)).  The cost is the plain
    per-agent sum, no deviation or aggregate shortcut.
    """
    T, lx, lu = model.horizon, model.state_dim, model.action_dim
    prob = build_stacked(model, n)
    g2 = model.gamma ** 2
    X = np.concatenate([np.atleast_1d(x0_init),
                        np.asarray(followers_init, dtype=float).reshape(n * lx)])
    traj = np.zeros((T, X.size))
    total = 0.0
    for t in range(1, T + 1):
        U = KU[t - 1] @ X
        D = KD[t - 1] @ X
        x0, u0, d0 = X[:lx], U[:lu], D[:lx]
        xf = X[lx:].reshape(n, lx)
        uf = U[lu:].reshape(n, lu)
        df = D[lx:].reshape(n, lx)
        xbar, ubar = xf.mean(axis=0), uf.mean(axis=0)
        stage = (
            float(np.einsum("ij,jk,ik->i", xf, model.Q[t - 1], xf).mean())
            + float(np.einsum("ij,jk,ik->i", uf, model.R[t - 1], uf).mean())
            - g2 * float((df * df).sum(axis=1).mean())
            + float(x0 @ model.Q0[t - 1] @ x0) + float(u0 @ model.R0[t - 1] @ u0)
            - g2 * float(d0 @ d0)
            + float((xbar - x0) @ model.F[t - 1] @ (xbar - x0))
            + float(xbar @ model.P[t - 1] @ xbar) + float(ubar @ model.H[t - 1] @ ubar)
        )
        total += stage
        traj[t - 1] = X
        X = prob.AA[t - 1] @ X + prob.BB[t - 1] @ U + D
    return total, traj


def verify_equivalence(model: ModelSpec, gains: StrategyGains, n: int,
                       x0_init, followers_init, decomposed_value: float) -> SaddleReport:
    """Joint-vs-decomposed agreement: value, gains, closed-loop trajectory."""
    sol = stacked_saddle_solve(model, n)
    report = SaddleReport()
    if not sol.feasible:
        report.value_gap = float("inf")
        return report
    joint_value = sol.value(np.atleast_1d(x0_init), followers_init)
    report.value_gap = float(abs(joint_value - decomposed_value))
    KUd, KDd = decomposed_joint_gains(model, gains, n)
    report.max_gain_discrepancy = max(
        float(np.max(np.abs(KUd - sol.KU))), float(np.max(np.abs(KDd - sol.KD))))
    cost_joint, traj_joint = rollout_joint(model, n, sol.KU, sol.KD, x0_init, followers_init)
    cost_dec, traj_dec = rollout_joint(model, n, KUd, KDd, x0_init, followers_init)
    report.base_cost = float(cost_dec)
    scale = max(1.0, abs(joint_value))
    traj_gap = float(np.max(np.abs(traj_joint - traj_dec)))
    report.ok = (report.value_gap <= 1e-8 * scale
                 and abs(cost_joint - joint_value) <= 1e-8 * scale
                 and abs(cost_joint - cost_dec) <= 1e-8 * scale
                 and traj_gap <= 1e-8 * max(1.0, float(np.max(np.abs(traj_joint)))))
    return report


def saddle_check(model: ModelSpec, gains: StrategyGains, num_directions: int = 50,
                 steps=(1e-3, 1e-2), seed: int = 0,
                 x0_init=None, followers_init=None, n: int | None = None) -> SaddleReport:
    """Random gain perturbations around the saddle point.

    Control-side perturbations must not decrease the deterministic cost
    (beyond -1e-9), disturbance-side perturbations must not increase it
    (beyond +1e-9).  All deltas are recorded.
    """
    n = model.n_followers if n is None else n
    if x0_init is None:
        x0_init = model.leader_init.mean()
    if followers_init is None:
        followers_init = np.atleast_2d(model.follower_init.mean()).repeat(n, axis=0)
    KU0, KD0 = decomposed_joint_gains(model, gains, n)
    base, _ = rollout_joint(model, n, KU0, KD0, x0_init, followers_init)
    rng = np.random.default_rng(seed)

    report = SaddleReport(base_cost=base)
    for side, K0 in (("control", KU0), ("disturbance", KD0)):
        for k in range(num_directions):
            direction = rng.standard_normal(K0.shape)
            direction /= np.linalg.norm(direction)
            for step in steps:
                if side == "control":
                    cost, _ = rollout_joint(model, n, KU0 + step * direction, KD0,
                                            x0_init, followers_init)
                else:
                    cost, _ = rollout_joint(model, n, KU0, KD0 + step * direction,
                                            x0_init, followers_init)
                report.perturbations.append((side, k, step, cost - base))
    control = [d for s, _, _, d in report.perturbations if s == "control"]
    disturb = [d for s, _, _, d in report.perturbations if s == "disturbance"]
    report.control_min_delta = min(control) if control else float("nan")
    report.disturbance_max_delta = max(disturb) if disturb else float("nan")
    report.ok = (report.control_min_delta >= -1e-9 and report.disturbance_max_delta <= 1e-9)
    return report


def imfs_gap_study(model: ModelSpec, gains: StrategyGains, n_list, seed: int, runs: int,
                   disturbance: DisturbancePolicy | None = None,
                   observation_times=()) -> list[dict]:
    """|J(intermittent) - J(full sharing)| across population sizes.

    Common random numbers: both arms share the master seed, so initial
    states and noises coincide run by run.  The per-follower coefficients
    are n-independent, so the same gains drive every population size.
    """
    if disturbance is None:
        disturbance = DisturbancePolicy.worst_case()
    rows = []
    for n in n_list:
        mdl = replace(model, n_followers=int(n))
        info_imfs = (InfoStructure.no_sharing() if not observation_times
                     else InfoStructure.imfs(observation_times))
        cfg_mfs = SimConfig(master_seed=seed, num_runs=runs, disturbance=disturbance,
                            info=InfoStructure.mfs(model.horizon))
        cfg_imfs = SimConfig(master_seed=seed, num_runs=runs, disturbance=disturbance,
                             info=info_imfs)
        j_mfs = evaluate_cost(mdl, simulate(mdl, gains, cfg_mfs))
        j_imfs = evaluate_cost(mdl, simulate(mdl, gains, cfg_imfs))
        gap = abs(j_imfs.mean - j_mfs.mean)
        rows.append({"n": int(n), "runs": runs, "j_mfs": j_mfs.mean, "j_imfs": j_imfs.mean,
                     "gap": gap, "gap_times_n": gap * n})
    return rows


def saddle_report_csv(report: SaddleReport) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["side", "direction", "step", "delta"])
    for side, k, step, delta in report.perturbations:
        writer.writerow([side, k, repr(float(step)), repr(float(delta))])
    return buf.getvalue()


def gap_table_csv(rows: list[dict]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["n", "runs", "j_mfs", "j_imfs", "gap", "gap_times_n"])
    for row in rows:
        writer.writerow([row["n"], row["runs"], repr(float(row["j_mfs"])),
                         repr(float(row["j_imfs"])), repr(float(row["gap"])),
                         repr(float(row["gap_times_n"]))])
    return buf.getvalue()
