"""Shared random generators for the test suite."""
from __future__ import annotations

import numpy as np

from egoeval import Box3D


def random_box(rng, d_range=(5.0, 45.0), bearing=1.0, size_w=(0.6, 3.0),
               size_l=(0.8, 6.5), size_h=(1.0, 3.0), label="car"):
    """A box in front of the ego vehicle, center at the given distance range."""
    d = rng.uniform(*d_range)
    th = rng.uniform(-bearing, bearing)
    w = rng.uniform(*size_w)
    l = rng.uniform(*size_l)
    h = rng.uniform(*size_h)
    return Box3D(center=(d * np.cos(th), d * np.sin(th), h / 2.0),
                 size=(w, l, h), yaw=rng.uniform(-np.pi, np.pi), label=label)


def perturbed(rng, box, pos_sigma=0.6, size_lo=0.75, size_hi=1.3,
              yaw_sigma=0.25, score=None):
    """A jittered copy: the usual true-positive-style perturbation."""
    return Box3D(
        center=(box.center[0] + rng.normal(0.0, pos_sigma),
                box.center[1] + rng.normal(0.0, pos_sigma),
                box.center[2] + rng.normal(0.0, 0.2)),
        size=(box.size[0] * rng.uniform(size_lo, size_hi),
              box.size[1] * rng.uniform(size_lo, size_hi),
              box.size[2] * rng.uniform(0.8, 1.25)),
        yaw=box.yaw + rng.normal(0.0, yaw_sigma),
        label=box.label, score=score)


def random_pair(rng, **kwargs):
    g = random_box(rng, **kwargs)
    return perturbed(rng, g), g


def overlapping_pair(rng, max_tries=50, **kwargs):
    """A pair guaranteed to overlap in BEV (for gradient tests)."""
    from egoeval import bev_polygon, convex_intersection

    for _ in range(max_tries):
        p, g = random_pair(rng, **kwargs)
        if convex_intersection(bev_polygon(p), bev_polygon(g)) is not None:
            return p, g
    raise AssertionError("could not draw an overlapping pair")
