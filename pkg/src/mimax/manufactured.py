"""Closed-form test fields for the transient Maxwell system.

The trio (E, B, p=0) satisfies Faraday's law with B = curl E, both
divergence constraints, and Ampere's law with the source j = E + curl B;
all three fields decay like exp(-t).  The tangential trace of E and the
normal trace of B on the solid's boundary are nonzero, so runs against
these fields exercise the inhomogeneous essential-data path.
"""

from __future__ import annotations

import numpy as np


class ManufacturedSolution:
    """Vectorized evaluators; points are arrays of shape (..., 3)."""

    @staticmethod
    def _trig(points):
        x = np.asarray(points, dtype=np.float64)
        px, py, pz = (np.pi * x[..., k] for k in range(3))
        return (np.sin(px), np.cos(px), np.sin(py), np.cos(py),
                np.sin(pz), np.cos(pz))

    def e(self, points, t):
        sx, cx, sy, cy, sz, cz = self._trig(points)
        amp = np.exp(-t) / np.pi
        return amp * np.stack([-cx * sy * sz, sx * cy * sz,
                               np.zeros_like(sx)], axis=-1)

    def b(self, points, t):
        sx, cx, sy, cy, sz, cz = self._trig(points)
        amp = np.exp(-t)
        return amp * np.stack([-sx * cy * cz, -cx * sy * cz,
                               2.0 * cx * cy * sz], axis=-1)

    def p(self, points, t):
        shape = np.asarray(points).shape[:-1]
        return np.zeros(shape)

    def j(self, points, t):
        sx, cx, sy, cy, sz, cz = self._trig(points)
        amp = -np.exp(-t) * (1.0 / np.pi + 3.0 * np.pi)
        return amp * np.stack([cx * sy * sz, -sx * cy * sz,
                               np.zeros_like(sx)], axis=-1)


def exact_fields(point, t):
    """(E, B, p, j) at one point and time."""
    ms = ManufacturedSolution()
    pt = np.asarray(point, dtype=np.float64)
    return (
        ms.e(pt, t),
        ms.b(pt, t),
        ms.p(pt, t),
        ms.j(pt, t),
    )
