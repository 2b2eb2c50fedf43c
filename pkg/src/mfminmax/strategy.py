"""Executable policies for each information structure.

The saddle-point actions feed back on the own state, the leader state and
the follower mean.  When the mean is unobserved (intermittent sharing) the
policy runs on the estimate m_hat, propagated through the closed-loop mean
dynamics and reset to the true mean at observation times.  The propagation
includes the worst-case mean disturbance evaluated at (x0, m_hat) by
default -- the true mean is not measurable there -- with a nominal (zero
disturbance) ablation switch.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .model import InfoStructure, ModelSpec
from .synthesis import StrategyGains

__all__ = [
    "PolicyState",
    "leader_action",
    "follower_action",
    "worst_case_disturbance",
    "estimator_step",
]


@dataclass
class PolicyState:
    """Per-run mutable policy context: gains, info structure, m_hat, time.

    One PolicyState per simulation run; it is advanced sequentially in t.
    Under full sharing m_hat is simply the observed mean at every step.
    """

    model: ModelSpec
    gains: StrategyGains
    info: InfoStructure
    m_hat: np.ndarray = field(default=None)
    t: int = 1
    use_worst_case_dbar: bool = True

    @classmethod
    def start(cls, model: ModelSpec, gains: StrategyGains, info: InfoStructure,
              xbar1: np.ndarray | None = None, use_worst_case_dbar: bool = True) -> "PolicyState":
        """Policy at t=1: the known initial mean, or the observed one."""
        if info.observed(1):
            if xbar1 is None:
                raise ValueError("t=1 is an observation time but no mean was supplied")
            m1 = np.asarray(xbar1, dtype=float).copy()
        else:
            m1 = model.follower_mean_init()
        return cls(model=model, gains=gains, info=info, m_hat=m1, t=1,
                   use_worst_case_dbar=use_worst_case_dbar)


def leader_action(p: PolicyState, x0: np.ndarray) -> np.ndarray:
    """u0_t = L11 x0 + L12 m_hat."""
    g = p.gains
    return g.l11(p.t) @ x0 + g.l12(p.t) @ p.m_hat


def follower_action(p: PolicyState, xi: np.ndarray, x0: np.ndarray) -> np.ndarray:
    """u^i_t = L_brev x^i + L21 x0 + (L22 - L_brev) m_hat.

    ``xi`` may be a single state (lx,) or a population batch (n, lx); the
    result matches.
    """
    g = p.gains
    L = g.L_brev[p.t - 1]
    common = g.l21(p.t) @ x0 + (g.l22(p.t) - L) @ p.m_hat
    xi = np.asarray(xi, dtype=float)
    if xi.ndim == 1:
        return L @ xi + common
    return xi @ L.T + common


def worst_case_disturbance(p: PolicyState, x0: np.ndarray, xi: np.ndarray | None = None):
    """Worst-case feedback disturbances, on the policy's information.

    With ``xi`` given, returns the per-follower disturbance
    d^i = K_brev (x^i - m_hat) + dbar; otherwise the pair (d0, dbar) from
    the augmented gain.  The unobservable mean is replaced by m_hat.
    """
    g = p.gains
    lx = g.state_dim
    aug = g.K_bar[p.t - 1] @ np.concatenate([x0, p.m_hat])
    d0, dbar = aug[:lx], aug[lx:]
    if xi is None:
        return d0, dbar
    xi = np.asarray(xi, dtype=float)
    K = g.K_brev[p.t - 1]
    if xi.ndim == 1:
        return K @ (xi - p.m_hat) + dbar
    return (xi - p.m_hat) @ K.T + dbar


def estimator_step(p: PolicyState, x0: np.ndarray, observed: np.ndarray | None = None) -> np.ndarray:
    """Advance m_hat to t+1: reset to an observed mean, or propagate.

    Propagation runs the closed-loop mean dynamics
    m_{t+1} = (A + S + B L22) m + (B L21 + E) x0 + dbar, with dbar the
    worst-case value at (x0, m_hat) or zero under the nominal switch.
    Mutates and returns p.m_hat; p.t advances by one.
    """
    t, m, g = p.t, p.m_hat, p.gains
    if t >= p.model.horizon:
        raise ValueError(f"cannot advance the estimator past the horizon (t={t})")
    if observed is not None:
        if not p.info.observed(t + 1):
            raise ValueError(f"t+1={t + 1} is not an observation time")
        p.m_hat = np.asarray(observed, dtype=float).copy()
    else:
        mdl = p.model
        lx = g.state_dim
        closed = mdl.A[t - 1] + mdl.S[t - 1] + mdl.B[t - 1] @ g.l22(t)
        drive = (mdl.B[t - 1] @ g.l21(t) + mdl.E[t - 1]) @ x0
        if p.use_worst_case_dbar:
            dbar = (g.K_bar[t - 1] @ np.concatenate([x0, m]))[lx:]
        else:
            dbar = np.zeros(lx)
        p.m_hat = closed @ m + drive + dbar
    p.t = t + 1
    return p.m_hat
