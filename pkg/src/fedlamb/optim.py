"""Per-client optimizer step rules: SGD, the AMSGrad moment recursion and
the layer-wise trust-ratio step.

No bias correction anywhere: the moment recursions are used exactly as
m <- b1*m + (1-b1)*g and v <- b2*v + (1-b2)*g^2.
"""

from __future__ import annotations

import math
from dataclasses import dataclass

import numpy as np

from .blocks import (
    BlockVector,
    FlatStat,
    LayeredParams,
    lin_comb,
    ratio_div,
    require_congruent,
    square,
)


@dataclass(frozen=True)
class Hyper:
    alpha: float
    beta1: float = 0.9
    beta2: float = 0.999
    lam: float = 0.0
    eps: float = 1e-8

    def __post_init__(self):
        if not self.alpha > 0:
            raise ValueError("alpha must be positive")
        if not (0 <= self.beta1 < 1 and 0 <= self.beta2 < 1):
            raise ValueError("beta1, beta2 must be in [0, 1)")
        if not 0 <= self.lam <= 1:
            raise ValueError("lam must be in [0, 1]")
        if not self.eps > 0:
            raise ValueError("eps must be positive")


@dataclass
class OptState:
    """Per-client optimizer memory, carried across the rounds a client
    participates in."""

    m: FlatStat
    v: FlatStat
    hyper: Hyper


@dataclass(frozen=True)
class ScalingFn:
    """Layer-norm scaling phi; identity in practice, clipped variant for
    testing the bounded-scaling regime."""

    kind: str = "identity"
    lo: float = 0.0
    hi: float = math.inf

    def __post_init__(self):
        if self.kind not in ("identity", "clipped"):
            raise ValueError(f"unknown scaling kind {self.kind!r}")
        if self.kind == "clipped" and not (0 < self.lo <= self.hi):
            raise ValueError("clipped scaling requires 0 < lo <= hi")

    def __call__(self, a: float) -> float:
        if self.kind == "identity":
            return a
        return min(max(a, self.lo), self.hi)


IDENTITY = ScalingFn()


def clipped(lo: float, hi: float) -> ScalingFn:
    return ScalingFn("clipped", lo, hi)


def sgd_step(
    params: LayeredParams,
    g: FlatStat,
    alpha: float,
    momentum_buf: FlatStat | None = None,
    mu: float = 0.0,
) -> tuple[LayeredParams, FlatStat]:
    """buf' = mu*buf + g; params' = params - alpha*buf'. mu=0 is plain SGD."""
    require_congruent(params, g)
    if momentum_buf is None:
        buf = g
    else:
        buf = lin_comb(mu, momentum_buf, 1.0, g)
    return lin_comb(1.0, params, -alpha, buf), buf


def moment_update(state: OptState, g: FlatStat) -> OptState:
    """One step of the first/second moment recursion (no bias correction)."""
    require_congruent(state.m, g)
    h = state.hyper
    m = lin_comb(h.beta1, state.m, 1.0 - h.beta1, g)
    v = lin_comb(h.beta2, state.v, 1.0 - h.beta2, square(g))
    return OptState(m, v, h)


def amsgrad_step(
    params: LayeredParams, m: FlatStat, vhat: FlatStat, alpha: float, eps: float
) -> LayeredParams:
    """Dimension-wise adaptive step params - alpha * m / sqrt(max(vhat, eps))."""
    return lin_comb(1.0, params, -alpha, ratio_div(m, vhat, eps))


def lamb_step(
    params: LayeredParams,
    psi: FlatStat,
    alpha: float,
    lam: float = 0.0,
    phi: ScalingFn = IDENTITY,
) -> LayeredParams:
    """Layer-wise normalized step.

    Per block: u = psi + lam*theta; theta' = theta - alpha*phi(|theta|)*u/|u|.
    Degenerate blocks: |u| = 0 leaves the block unchanged; |theta| = 0
    replaces the trust factor phi(|theta|)/|u| by 1 so zero-initialized
    bias blocks stay trainable under the identity scaling.
    """
    require_congruent(params, psi)
    new_blocks = []
    for theta, p in zip(params.blocks, psi.blocks):
        u = p + lam * theta
        u_norm = float(np.linalg.norm(u))
        t_norm = float(np.linalg.norm(theta))
        if u_norm == 0.0:
            new_blocks.append(theta)
        elif t_norm == 0.0:
            new_blocks.append(theta - alpha * u)
        else:
            new_blocks.append(theta - (alpha * phi(t_norm) / u_norm) * u)
    return BlockVector(params.names, tuple(new_blocks))


def milestone_lr(alpha0: float, r: int, milestones, factor: float) -> float:
    """alpha0 * factor^(number of milestones at or before round r)."""
    ms = list(milestones)
    if any(b <= a for a, b in zip(ms, ms[1:])):
        raise ValueError("milestones must be strictly increasing")
    return alpha0 * factor ** sum(1 for m in ms if m <= r)
