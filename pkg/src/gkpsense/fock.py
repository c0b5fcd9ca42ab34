"""Truncated Fock-space linear algebra.

States and operators are plain ``numpy`` complex arrays. Whenever a qubit is
present it is the first tensor factor, with basis order ``(e, g)`` so that
``sigma_z = diag(+1, -1)``: ``sigma_z|e> = +|e>`` and ``sigma_z|g> = -|g>``.
Every sign in the sBs construction follows from this single choice.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass
from functools import lru_cache
from typing import NamedTuple

import numpy as np
from scipy.special import gammainc

from .errors import NumericalError, TruncationError

L = float(np.sqrt(2.0 * np.pi))
"""Lattice spacing of the square qunaught grid."""

LEAKAGE_TOL = 1e-8

E, G = 0, 1
"""Qubit basis indices (excited first)."""


@dataclass(frozen=True)
class HilbertConfig:
    cavity_dim: int = 140
    include_qubit: bool = False

    def __post_init__(self):
        if int(self.cavity_dim) != self.cavity_dim or self.cavity_dim < 2:
            raise ValueError(f"cavity_dim must be an integer >= 2, got {self.cavity_dim}")

    @property
    def dim(self) -> int:
        return self.cavity_dim * (2 if self.include_qubit else 1)

    def cavity(self) -> "HilbertConfig":
        return HilbertConfig(self.cavity_dim, False)

    def with_qubit(self) -> "HilbertConfig":
        return HilbertConfig(self.cavity_dim, True)


class Operators(NamedTuple):
    a: np.ndarray
    a_dag: np.ndarray
    n: np.ndarray
    q: np.ndarray
    p: np.ndarray


def _readonly(m: np.ndarray) -> np.ndarray:
    m.setflags(write=False)
    return m


@lru_cache(maxsize=32)
def _cavity_operators(dim: int) -> Operators:
    a = np.diag(np.sqrt(np.arange(1, dim, dtype=float)), k=1).astype(complex)
    ad = a.conj().T.copy()
    n = np.diag(np.arange(dim, dtype=float)).astype(complex)
    q = (a + ad) / np.sqrt(2.0)
    p = 1j * (ad - a) / np.sqrt(2.0)
    return Operators(*(_readonly(m) for m in (a, ad, n, q, p)))


def make_operators(config: HilbertConfig) -> Operators:
    """Ladder, number and quadrature operators at the config's total dimension."""
    ops = _cavity_operators(config.cavity_dim)
    if not config.include_qubit:
        return ops
    eye2 = np.eye(2)
    return Operators(*(np.kron(eye2, m) for m in ops))


def hermitian_function(h: np.ndarray, fn) -> np.ndarray:
    """Apply a scalar function to a Hermitian matrix through its eigenbasis."""
    h = 0.5 * (h + h.conj().T)
    w, v = np.linalg.eigh(h)
    return (v * fn(w)) @ v.conj().T


def expm_antihermitian(x: np.ndarray) -> np.ndarray:
    """exp(X) for anti-Hermitian X, via the eigenbasis of the Hermitian -iX."""
    return hermitian_function(-1j * x, lambda w: np.exp(1j * w))


@lru_cache(maxsize=32)
def _p_eigensystem(dim: int):
    w, v = np.linalg.eigh(_cavity_operators(dim).p)
    return _readonly(w), _readonly(v), _readonly(v.conj().T.copy())


def displaced_vacuum_leakage(beta: complex, dim: int) -> float:
    """Weight of the coherent state |beta> above the Fock cutoff."""
    return float(gammainc(dim, abs(beta) ** 2))


def _check_leakage(beta: complex, dim: int) -> None:
    leak = displaced_vacuum_leakage(beta, dim)
    if leak > LEAKAGE_TOL:
        raise TruncationError(
            f"|beta|={abs(beta):.3g} leaks {leak:.2e} beyond cavity_dim={dim}")


@lru_cache(maxsize=512)
def _displacement_cached(beta: complex, dim: int) -> np.ndarray:
    # beta a^dag - beta* a = |beta| R (a^dag - a) R^dag with R = exp(i arg(beta) n),
    # and a^dag - a = -i sqrt(2) p, so one cached eigensystem of p serves every beta.
    w, v, vh = _p_eigensystem(dim)
    r, phi = abs(beta), np.angle(beta)
    rot = np.exp(1j * phi * np.arange(dim))
    core = (v * np.exp(-1j * np.sqrt(2.0) * r * w)) @ vh
    return _readonly(rot[:, None] * core * rot.conj()[None, :])


def displacement(beta: complex, config: HilbertConfig | int) -> np.ndarray:
    """Cavity displacement D(beta) = exp(beta a^dag - beta* a)."""
    dim = config if isinstance(config, int) else config.cavity_dim
    beta = complex(beta)
    _check_leakage(beta, dim)
    d = _displacement_cached(beta, dim)
    if isinstance(config, HilbertConfig) and config.include_qubit:
        return np.kron(np.eye(2), d)
    return d


def cd_blocks(alpha: complex, dim: int) -> tuple[np.ndarray, np.ndarray]:
    """(e, g) cavity blocks of CD(alpha): D(+alpha/2sqrt2) and D(-alpha/2sqrt2)."""
    half = complex(alpha) / (2.0 * np.sqrt(2.0))
    return displacement(half, dim), displacement(-half, dim)


def block_diag2(e_block: np.ndarray, g_block: np.ndarray) -> np.ndarray:
    n = e_block.shape[0]
    out = np.zeros((2 * n, 2 * n), dtype=complex)
    out[:n, :n] = e_block
    out[n:, n:] = g_block
    return out


def controlled_displacement(alpha: complex, config: HilbertConfig | int) -> np.ndarray:
    """CD(alpha) = exp[(alpha a^dag - alpha* a) sigma_z / (2 sqrt 2)] on qubit x cavity."""
    dim = config if isinstance(config, int) else config.cavity_dim
    return block_diag2(*cd_blocks(alpha, dim))


SIGMA_X = np.array([[0, 1], [1, 0]], dtype=complex)
SIGMA_Z = np.array([[1, 0], [0, -1]], dtype=complex)
SIGMA_MINUS = np.array([[0, 0], [1, 0]], dtype=complex)  # |g><e|


def rx_matrix(theta: float) -> np.ndarray:
    """2x2 R_x(theta) = exp(-i theta sigma_x / 2)."""
    c, s = np.cos(theta / 2), np.sin(theta / 2)
    return np.array([[c, -1j * s], [-1j * s, c]])


def qubit_rotation_x(theta: float, config: HilbertConfig | int | None = None) -> np.ndarray:
    """R_x(theta), tensored with the cavity identity when a config is given."""
    r = rx_matrix(theta)
    if config is None:
        return r
    dim = config if isinstance(config, int) else config.cavity_dim
    return np.kron(r, np.eye(dim))


def qubit_projectors() -> dict[str, np.ndarray]:
    e = np.array([1, 0], dtype=complex)
    g = np.array([0, 1], dtype=complex)
    return {"P_g": np.outer(g, g), "P_e": np.outer(e, e), "plus": (e + g) / np.sqrt(2.0)}


# -- states -----------------------------------------------------------------

def ket2dm(psi: np.ndarray) -> np.ndarray:
    psi = np.asarray(psi, dtype=complex)
    return np.outer(psi, psi.conj())


def fock_ket(k: int, dim: int) -> np.ndarray:
    psi = np.zeros(dim, dtype=complex)
    psi[k] = 1.0
    return psi


def vacuum(dim: int) -> np.ndarray:
    return ket2dm(fock_ket(0, dim))


def coherent_ket(beta: complex, dim: int) -> np.ndarray:
    return displacement(beta, dim)[:, 0].copy()


def displace_state(rho: np.ndarray, beta: complex) -> np.ndarray:
    d = displacement(beta, rho.shape[0])
    return d @ rho @ d.conj().T


def expect(op: np.ndarray, rho: np.ndarray) -> complex:
    """tr(op rho) without forming the product."""
    return complex(np.sum(op.T * rho))


def mean_photon_number(rho: np.ndarray) -> float:
    dim = rho.shape[0]
    return float(np.real(np.dot(np.arange(dim), np.diag(rho))))


def check_density_matrix(rho: np.ndarray, normalized: bool = True,
                         guard_photons: bool = False) -> None:
    """Raise NumericalError if rho is not a valid density matrix."""
    rho = np.asarray(rho)
    if rho.ndim != 2 or rho.shape[0] != rho.shape[1]:
        raise NumericalError(f"density matrix must be square, got shape {rho.shape}")
    herm = np.max(np.abs(rho - rho.conj().T))
    if herm > 1e-10:
        raise NumericalError(f"not Hermitian: max |rho - rho^dag| = {herm:.2e}")
    tr = np.real(np.trace(rho))
    if normalized and abs(tr - 1) > 1e-8:
        raise NumericalError(f"trace {tr:.12f} differs from 1")
    lo = np.linalg.eigvalsh(0.5 * (rho + rho.conj().T))[0]
    if lo < -1e-8:
        raise NumericalError(f"negative eigenvalue {lo:.2e}")
    if guard_photons:
        check_truncation(rho)


def check_truncation(rho: np.ndarray) -> float:
    """Photon-number guard: warn above dim/4, fail above dim/2."""
    dim = rho.shape[0]
    nbar = mean_photon_number(rho) / max(np.real(np.trace(rho)), 1e-300)
    if nbar >= dim / 2:
        raise TruncationError(f"<n> = {nbar:.2f} exceeds half the cutoff {dim}")
    if nbar >= dim / 4:
        warnings.warn(f"<n> = {nbar:.2f} is above a quarter of the cutoff {dim}",
                      stacklevel=2)
    return nbar


# -- fidelity ---------------------------------------------------------------

_NEG_TOL = 1e-6


def _sqrt_factor(rho: np.ndarray, rel_cut: float = 1e-15):
    """Columns V_k sqrt(w_k) spanning the support of rho."""
    w, v = np.linalg.eigh(0.5 * (rho + rho.conj().T))
    if w[0] < -_NEG_TOL:
        raise NumericalError(f"state has eigenvalue {w[0]:.2e} below -{_NEG_TOL}")
    keep = w > rel_cut * max(w[-1], 0.0)
    return v[:, keep] * np.sqrt(w[keep])


class FidelityTarget:
    """Precomputed square-root factor of a reference state for repeated fidelities."""

    def __init__(self, sigma: np.ndarray):
        self.factor = _sqrt_factor(np.asarray(sigma, dtype=complex))
        self.factor_h = self.factor.conj().T

    def __call__(self, rho: np.ndarray) -> float:
        # sqrt(s) rho sqrt(s) has the same non-zero spectrum as F^dag rho F
        m = self.factor_h @ rho @ self.factor
        w = np.linalg.eigvalsh(0.5 * (m + m.conj().T))
        if w[0] < -_NEG_TOL:
            raise NumericalError(f"fidelity argument has eigenvalue {w[0]:.2e}")
        return float(min(np.sum(np.sqrt(np.clip(w, 0.0, None))), 1.0))


def fidelity(rho: np.ndarray, sigma: np.ndarray) -> float:
    """Root fidelity tr sqrt(sqrt(rho) sigma sqrt(rho))."""
    return FidelityTarget(rho)(np.asarray(sigma, dtype=complex))


# -- phase space ------------------------------------------------------------

def wigner(rho: np.ndarray, points) -> np.ndarray:
    """Wigner function at (q, p) points from the displaced-parity formula."""
    dim = rho.shape[0]
    w, v, vh = _p_eigensystem(dim)
    parity = (-1.0) ** np.arange(dim)
    k = np.arange(dim)
    out = []
    for q0, p0 in points:
        beta = complex(q0, p0) / np.sqrt(2.0)
        r, phi = abs(beta), np.angle(beta)
        rot = np.exp(1j * phi * k)
        rho_rot = rot.conj()[:, None] * rho * rot[None, :]
        ph = np.exp(-1j * np.sqrt(2.0) * r * w)
        b = (vh @ rho_rot @ v) * (ph.conj()[:, None] * ph[None, :])
        diag = np.einsum("mj,jm->m", v @ b, vh)
        out.append(np.real(np.dot(parity, diag)) / np.pi)
    return np.array(out)
