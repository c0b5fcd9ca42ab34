"""Closed-form benchmark bounds for two-quadrature displacement sensing.

Units follow q = (a + a^dag)/sqrt2, so the vacuum quadrature variance is 1/2
and ``n_bar`` is the total mean photon number of the probe.
"""

from __future__ import annotations

import numpy as np

from .errors import Infeasible


def _nonneg(n_bar: float) -> float:
    if n_bar < 0:
        raise ValueError(f"n_bar must be >= 0, got {n_bar}")
    return float(n_bar)


def qcrb_total_mse(n_bar: float) -> float:
    """Multivariate QCRB on dq^2 + dp^2."""
    return 1.0 / (2 * _nonneg(n_bar) + 1)


def sensitivity_quantum_limit(n_bar: float) -> float:
    """Per-quadrature sensitivity implied by the QCRB: 1/sqrt(4 n + 2)."""
    return 1.0 / np.sqrt(4 * _nonneg(n_bar) + 2)


def uhlmann_ratio(n_bar: float) -> float:
    """R = 1/(8 n + 4), the incompatibility ratio of the two displacement generators."""
    return 1.0 / (8 * _nonneg(n_bar) + 4)


def holevo_upper_mse(n_bar: float) -> float:
    """Upper bound on the Holevo bound: QCRB (1 + R)."""
    return qcrb_total_mse(n_bar) * (1 + uhlmann_ratio(n_bar))


def holevo_upper_sensitivity(n_bar: float) -> float:
    return float(np.sqrt(1 + uhlmann_ratio(n_bar)) * sensitivity_quantum_limit(n_bar))


def gaussian_limit_total_mse(sigma: float) -> float:
    """Best single-mode Gaussian strategy under a Gaussian prior of std ``sigma``."""
    if sigma <= 0:
        raise ValueError("sigma must be positive")
    s2 = sigma ** 2
    return s2 if sigma < 1 else 2 * s2 / (s2 + 1)


COHERENT_HETERODYNE_TOTAL_MSE = 2.0


def tmsv_total_mse(r: float, sigma: float | None = None) -> float:
    """Two-mode squeezed vacuum total MSE; ``sigma=None`` is the flat-prior limit 2 e^{-2r}."""
    if r < 0:
        raise ValueError("r must be >= 0")
    sq = np.exp(-2 * r)
    if sigma is None:
        return float(2 * sq)
    s2 = sigma ** 2
    return float(2 * sq * s2 / (sq + s2))


def tmsv_squeezing(target_total_mse: float, sigma: float | None = None) -> float:
    """Squeezing r at which the TMSV total MSE equals the target."""
    if target_total_mse <= 0:
        raise Infeasible("target must be positive")
    if target_total_mse > tmsv_total_mse(0.0, sigma) * (1 + 1e-12):
        raise Infeasible(f"target {target_total_mse} is above the r=0 value")
    if sigma is None:
        sq = target_total_mse / 2
    else:
        s2 = sigma ** 2
        # 2 x s2 / (x + s2) = m  =>  x = m s2 / (2 s2 - m)
        sq = target_total_mse * s2 / (2 * s2 - target_total_mse)
    sq = min(sq, 1.0)
    return float(-0.5 * np.log(sq))


def tmsv_equivalent_db(target_total_mse: float, sigma: float | None = None) -> float:
    """10 log10(e^{2r}) for the TMSV squeezing reaching the target total MSE."""
    return float(10 * np.log10(np.exp(2 * tmsv_squeezing(target_total_mse, sigma))))


def tmsv_photons(r: float, both_modes: bool = True) -> float:
    """Mean photons of a TMSV: sinh^2 r per mode, twice that over both modes."""
    return float((2 if both_modes else 1) * np.sinh(r) ** 2)


def bounds_table(n_bar: float, sigma: float | None = None) -> list[tuple[str, float]]:
    rows = [
        ("qcrb_total_mse", qcrb_total_mse(n_bar)),
        ("holevo_upper_total_mse", holevo_upper_mse(n_bar)),
        ("uhlmann_ratio", uhlmann_ratio(n_bar)),
        ("sensitivity_quantum_limit", sensitivity_quantum_limit(n_bar)),
        ("holevo_upper_sensitivity", holevo_upper_sensitivity(n_bar)),
        ("coherent_heterodyne_total_mse", COHERENT_HETERODYNE_TOTAL_MSE),
    ]
    if sigma is not None:
        rows.append(("gaussian_limit_total_mse", gaussian_limit_total_mse(sigma)))
    return rows
