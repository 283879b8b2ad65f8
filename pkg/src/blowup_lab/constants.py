"""Calibrated constants.

The construction asserts that these constants exist without giving values.
Each one below was measured once on the reference sweep named in its
comment, rounded up, and frozen.  Changing a value here changes what the
checks accept, so recalibrate with ``scenarios.calibration_sweeps`` rather than by hand.
"""
from __future__ import annotations

import math

# smallness radius of the zero-stability probe, as a fraction of kappa
EPS0_FRACTION = 0.05

# sup of ||w(s)|| e^{(s-s1)/(p-1)} / ||w(s1)|| over the zero-stability sweep
# (p in {1.5, 2, 3}; shapes h0h0, h2h0+h0h2, h2h2, h4h0+h0h4, mixed; window 4):
# sweep max 1.5952 (flat data at p = 1.5, where eps0 is large)
M0 = 1.6

# the heteroclinic-orbit stability constant (not fitted; every probe must stay below it)
M1 = 10.0

# ||w_a(., s0) - w_0(a e^{s0/2}, s0)|| e^{s0/6}: sweep max 0.7397 at s0 = 10
# (s0 in {10, 12, 14, 16}, |a| e^{s0/2} in [0.5, 400], 7 angles, d = 0)
C_FLAT = 0.8

# |proj_{h0h0} w_a - (kappa - iota)| / (iota/A + iota^2): sweep max 0.5203
# (p = 2, delta = 100, A = 20, s0 = 14, 0 <= K <= L, K + L in [20, 40])
C_EXPANSION = 0.6

# two-sided bounds on w_0(a e^{s0/2}, s0) per region: worst excess times
# e^{s0/3} over the region sweep (s0 in {12, 14, 16}, d in {0, +-1 corners}):
# sweep max 0.5870
C_REGION = 0.6

# ||w_a(s) - (kappa - e^{s-s0} iota)|| / ((eta* + 1/A) e^{s-s0} iota + e^{-s0/3})
# over the descent sweep (s0 = 14, eta* = 0.05, K + L in {20, 24, 28}):
# sweep max 0.8130
M_DESCENT = 0.9

# defaults of the region split
M_SMALL = 0.05
ETA_STAR = 0.05


def eps0(kappa: float) -> float:
    return EPS0_FRACTION * kappa


def region_M(p: float) -> float:
    """Smallest ``M >= 1`` with ``kappa (1+M)^{-1/(p-1)} <= max(eps0/2, kappa/(2 M0))``."""
    target = max(EPS0_FRACTION / 2.0, 1.0 / (2.0 * M0))
    return max(1.0, target ** (-(p - 1.0)) - 1.0)


def region_M_ok(M: float, p: float) -> bool:
    kappa = (p - 1.0) ** (-1.0 / (p - 1.0))
    lhs = kappa * (1.0 + M) ** (-1.0 / (p - 1.0))
    return lhs <= max(eps0(kappa) / 2.0, kappa / (2.0 * M0)) * (1 + 1e-12) and M >= 1


for _p in (1.5, 2.0, 3.0):
    assert region_M_ok(region_M(_p), _p), _p
assert M0 >= 1 and M1 >= 1 and math.isfinite(C_FLAT)
