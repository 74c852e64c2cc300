"""Unit conventions.

Inputs and internal working units are metric-field: length in m, pressure in
MPa, time in days, permeability in mD, viscosity in mPa·s and well rates in
m³/d.  All SI conversion is folded into :data:`DARCY`, which turns
``k[mD] * A[m²] / L[m] * dp[MPa] / mu[mPa·s]`` into a rate in m³/d.
"""

MILLIDARCY_M2 = 9.86923266716e-16  # 1 mD in m²
MPA_PA = 1.0e6
MPAS_PAS = 1.0e-3
DAY_S = 86400.0

#: 0.0852701702443 m³/d per (mD·m·MPa / mPa·s)
DARCY = MILLIDARCY_M2 * MPA_PA / MPAS_PAS * DAY_S
