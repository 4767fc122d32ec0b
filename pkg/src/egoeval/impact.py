"""Intersection safety-impact model.

Annual collisions are estimated over three traffic stages: human-driven
vehicles only, mixed traffic with automated vehicles, and mixed traffic
with AVs supported by cooperative perception. The third stage links the
collision reduction to a perception improvement through a linear
regression slope

    beta = rho * sigma_col / sigma_ecmap,  sigma_col ~ sqrt(mu)

(collision counts modeled as Poisson), so delta_col = beta * delta_ecmap
collisions/year. EC-mAP quantities are in percentage points throughout
(e.g. sigma_ecmap = 5, delta_ecmap = 7.5). Years are 365 days.
"""
from __future__ import annotations

import math
from dataclasses import dataclass


@dataclass(frozen=True)
class ImpactParams:
    """Inputs of the three-stage collision estimate."""

    rate_per_million: float = 1.5
    daily_volume: float = 20000.0
    av_reduction: float = 0.5
    rho: float = -0.8
    sigma_ecmap: float = 5.0
    delta_ecmap: float = 7.5

    def __post_init__(self):
        if self.rate_per_million < 0.0:
            raise ValueError("rate_per_million must be >= 0")
        if self.daily_volume < 0.0:
            raise ValueError("daily_volume must be >= 0")
        if not 0.0 <= self.av_reduction <= 1.0:
            raise ValueError("av_reduction must lie in [0, 1]")
        if not -1.0 <= self.rho <= 0.0:
            raise ValueError("rho must lie in [-1, 0]")
        if self.sigma_ecmap <= 0.0:
            raise ValueError("sigma_ecmap must be > 0")


@dataclass(frozen=True)
class ImpactResult:
    """Per-stage annual collisions and the linear-model internals."""

    stage1: float
    stage2: float
    stage3: float
    beta: float
    delta_col: float
    further_reduction: float


def annual_collisions(rate_per_million: float, daily_volume: float) -> float:
    """Collisions/year from a per-million-entering-vehicles rate."""
    return rate_per_million * daily_volume * 365.0 / 1e6


def apply_av_reduction(base: float, av_reduction: float) -> float:
    """Collisions/year after a fractional AV reduction."""
    return base * (1.0 - av_reduction)


def slope_beta(rho: float, mu_stage2: float, sigma_ecmap: float) -> float:
    """Regression slope: collisions/year per EC-mAP percentage point."""
    return rho * math.sqrt(mu_stage2) / sigma_ecmap


def delta_collisions(beta: float, delta_ecmap: float) -> float:
    """Collision-rate change for an EC-mAP improvement (negative = fewer)."""
    return beta * delta_ecmap


def vision_zero_threshold(rho: float, sigma_ecmap: float,
                          delta_ecmap: float) -> float:
    """Stage-2 level at which the modeled reduction removes all collisions.

    Solves |rho| * sqrt(mu) / sigma * delta = mu for mu.
    """
    return (abs(rho) * delta_ecmap / sigma_ecmap) ** 2


def impact_pipeline(params: ImpactParams) -> ImpactResult:
    """Run the full three-stage estimate."""
    stage1 = annual_collisions(params.rate_per_million, params.daily_volume)
    stage2 = apply_av_reduction(stage1, params.av_reduction)
    beta = slope_beta(params.rho, stage2, params.sigma_ecmap)
    d_col = delta_collisions(beta, params.delta_ecmap)
    stage3 = max(0.0, stage2 - abs(d_col))
    further = (stage2 - stage3) / stage2 if stage2 > 0.0 else 0.0
    return ImpactResult(stage1=stage1, stage2=stage2, stage3=stage3,
                        beta=beta, delta_col=d_col, further_reduction=further)


def sensitivity_sweep(params: ImpactParams, av_reduction_grid) -> list[ImpactResult]:
    """Pipeline per AV-reduction grid point; grid values must lie in [0, 1]."""
    results = []
    for r in av_reduction_grid:
        p = ImpactParams(rate_per_million=params.rate_per_million,
                         daily_volume=params.daily_volume,
                         av_reduction=float(r), rho=params.rho,
                         sigma_ecmap=params.sigma_ecmap,
                         delta_ecmap=params.delta_ecmap)
        results.append(impact_pipeline(p))
    return results
