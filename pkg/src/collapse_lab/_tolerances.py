"""Numeric tolerances shared across the package.

Every invariant check reads its threshold from :data:`TOL` so that the
defaults live in one place.
"""

from __future__ import annotations

from dataclasses import dataclass


@dataclass(frozen=True)
class Tolerances:
    norm: float = 1e-12
    hermitian: float = 1e-12
    zero_vector: float = 1e-300
    imag_leak: float = 1e-10
    bloch_roundtrip: float = 1e-10
    negative_eigenvalue: float = 1e-10
    tangent_real_part: float = 1e-8
    kernel_membership: float = 1e-8
    kernel_sv_rel: float = 1e-10
    gaussian_tail_mass: float = 1e-10
    weak_regime_ratio: float = 0.1
    collapse_threshold: float = 1.0 - 1e-6
    degenerate_endpoint: float = 1e-12


TOL = Tolerances()
