"""Scaled patient-side follower and a parametric tissue surrogate.

The tissue is a cubic-stiffening Kelvin-Voigt element: a nonlinear spring in
parallel with a linear damper. Displacement ``d`` is measured from the
tissue's zero-force point; positive ``d`` is tension (retraction), negative is
compression (palpation). The returned force opposes the displacement.
"""

from __future__ import annotations

import math
from dataclasses import dataclass, replace

import numpy as np

from .trajectory import TrajectoryProtocol


@dataclass(frozen=True)
class TissueParams:
    k1: float = 100.0
    k3: float = 1.0e6
    b_env: float = 120.0
    axis: str = "z"
    tension_asymmetry: float = 1.0
    material_id: str = "nominal"
    rest_position: float = 0.0
    pretension_factor: float = 1.5

    def __post_init__(self):
        if self.k1 < 0 or self.k3 < 0 or self.b_env < 0:
            raise ValueError("k1, k3 and b_env must be non-negative")
        if not self.tension_asymmetry > 0:
            raise ValueError("tension_asymmetry must be positive")
        if not self.pretension_factor > 0:
            raise ValueError("pretension_factor must be positive")


@dataclass(frozen=True)
class PsmState:
    position: float = 0.0
    velocity: float = 0.0
    grasp_offset: float = 0.0
    lag_tau: float = 0.0


def tissue_force(tissue: TissueParams, d: float, v: float) -> float:
    spring = tissue.k1 * d + tissue.k3 * d * d * d
    if d > 0:
        spring *= tissue.tension_asymmetry
    return spring + tissue.b_env * v


def tissue_stiffness(tissue: TissueParams, d: float) -> float:
    """Local static stiffness dF/dd."""
    k = tissue.k1 + 3.0 * tissue.k3 * d * d
    return k * tissue.tension_asymmetry if d > 0 else k


def psm_follow(psm: PsmState, master_x: float, scale: float, dt: float,
               master_xd: float | None = None) -> PsmState:
    """Move the follower toward ``scale * master_x + grasp_offset``.

    With ``lag_tau == 0`` the follower is ideal. Otherwise it is an exactly
    discretised first-order lag, so a step reaches 63.2 % of its size after
    ``lag_tau`` seconds regardless of ``dt``.
    """
    if not scale > 0:
        raise ValueError("scale must be positive")
    target = scale * master_x + psm.grasp_offset
    if psm.lag_tau <= 0.0:
        if master_xd is None:
            vel = (target - psm.position) / dt
        else:
            vel = scale * master_xd
        return replace(psm, position=target, velocity=vel)
    a = math.exp(-dt / psm.lag_tau)
    pos = target + (psm.position - target) * a
    return replace(psm, position=pos, velocity=(pos - psm.position) / dt)


def pretensioned(tissue: TissueParams, pretension: float) -> TissueParams:
    """Stiffen ``k1`` for an orthogonal pre-tension given in newtons.

    ``k1_eff = k1 * (1 + (pretension_factor - 1) * pretension)``, so 1 N of
    pre-tension multiplies ``k1`` by ``pretension_factor``.
    """
    if pretension <= 0 or tissue.pretension_factor == 1.0:
        return tissue
    return replace(tissue, k1=tissue.k1 * (1.0 + (tissue.pretension_factor - 1.0) * pretension))


def initialize_grasp(protocol: TrajectoryProtocol, tissue: TissueParams, scale: float = 0.2,
                     lag_tau: float = 0.0) -> tuple[PsmState, TissueParams]:
    """Grasp, then zero the force: place the follower on the tissue rest point.

    Returns the initial follower state and the tissue parameters in effect
    for this protocol (pre-tension applied for x/y closed-loop runs).
    """
    s = 1.0 if protocol.frame == "psm" else scale
    offset = tissue.rest_position - s * protocol.start_position
    psm = PsmState(position=s * protocol.start_position + offset, velocity=0.0,
                   grasp_offset=offset, lag_tau=lag_tau)
    return psm, pretensioned(tissue, protocol.pretension)


def make_materials(nominal: TissueParams, n: int = 3, jitter: float = 0.1,
                   seed: int = 0) -> list[TissueParams]:
    """``n`` tissue samples with log-normal jitter on k1, k3 and b_env."""
    rng = np.random.default_rng(seed)
    out = []
    for i in range(n):
        f = np.exp(jitter * rng.standard_normal(3))
        out.append(replace(nominal, k1=nominal.k1 * float(f[0]), k3=nominal.k3 * float(f[1]),
                           b_env=nominal.b_env * float(f[2]),
                           material_id=f"m{i}"))
    return out
