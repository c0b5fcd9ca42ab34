"""Lindblad noise on the big conditional displacement of each sBs subround.

Time is measured in units of the gate time T_CD, so the CD Hamiltonian is
H = (i beta a^dag - i beta* a) sigma_z / (2 sqrt2) on t in [0, 1] and every
collapse operator carries a factor sqrt(T_CD / T).

Qubit x cavity states are handled as three cavity blocks (ee, eg, gg); the ge
block is the adjoint of eg. The integrator is a Lawson (integrating-factor)
fourth-order Runge-Kutta scheme: the CD unitary is applied exactly through its
block-diagonal propagator and only the dissipator is stepped.
"""

from __future__ import annotations

from dataclasses import dataclass, field, replace
from functools import lru_cache

import numpy as np

from .errors import IntegratorError, InvalidLifetimes
from .fock import (
    E,
    G,
    SIGMA_MINUS,
    SIGMA_Z,
    HilbertConfig,
    cd_blocks,
    controlled_displacement,
    make_operators,
    qubit_projectors,
    rx_matrix,
    vacuum,
)
from .sbs import (
    BIT_E,
    BIT_G,
    SbsParams,
    cd_amplitudes,
    feedback_displacement,
    next_gauge,
    round_schedule,
)

CHANNELS = ("qubit_relax", "qubit_dephase", "cavity_relax", "cavity_dephase")


@dataclass(frozen=True)
class NoiseParams:
    """Baseline lifetimes in microseconds, gate time in nanoseconds."""
    t1_qubit: float = 280.0
    t2_qubit: float = 240.0
    t1_cavity: float = 610.0
    t2_cavity: float = 980.0
    eta: float = 1.0
    t_cd: float = 500.0
    enabled: frozenset = field(default_factory=lambda: frozenset(CHANNELS))
    integrator_steps: int = 20

    def __post_init__(self):
        object.__setattr__(self, "enabled", frozenset(self.enabled))
        unknown = self.enabled - set(CHANNELS)
        if unknown:
            raise ValueError(f"unknown noise channels {sorted(unknown)}")
        if self.eta <= 0:
            raise ValueError("eta must be positive")
        if self.t_cd <= 0 or self.integrator_steps < 1:
            raise ValueError("t_cd and integrator_steps must be positive")
        for name in ("t1_qubit", "t2_qubit", "t1_cavity", "t2_cavity"):
            if getattr(self, name) <= 0:
                raise InvalidLifetimes(f"{name} must be positive")
        for kind in ("qubit", "cavity"):
            if _tphi(getattr(self, f"t1_{kind}"), getattr(self, f"t2_{kind}")) <= 0:
                raise InvalidLifetimes(f"{kind} T2 must be below 2 T1")

    @property
    def tphi_qubit(self) -> float:
        return self.eta * _tphi(self.t1_qubit, self.t2_qubit)

    @property
    def tphi_cavity(self) -> float:
        return self.eta * _tphi(self.t1_cavity, self.t2_cavity)

    def only(self, *channels) -> "NoiseParams":
        return replace(self, enabled=frozenset(channels))

    def rates(self) -> dict[str, float]:
        """Dimensionless rates T_CD / T of the enabled channels (others 0)."""
        tcd = self.t_cd * 1e-3
        full = {
            "qubit_relax": tcd / (self.eta * self.t1_qubit),
            "qubit_dephase": tcd / self.tphi_qubit,
            "cavity_relax": tcd / (self.eta * self.t1_cavity),
            "cavity_dephase": tcd / self.tphi_cavity,
        }
        return {k: (v if k in self.enabled else 0.0) for k, v in full.items()}


def _tphi(t1: float, t2: float) -> float:
    inv = 1 / t2 - 1 / (2 * t1)
    return 1 / inv if inv > 0 else -1.0


def collapse_operators(noise: NoiseParams, config: HilbertConfig | int) -> list[np.ndarray]:
    """Collapse operators on qubit x cavity in T_CD units, disabled channels omitted."""
    dim = config if isinstance(config, int) else config.cavity_dim
    ops = make_operators(HilbertConfig(dim))
    eye_c, eye_q = np.eye(dim), np.eye(2)
    r = noise.rates()
    built = {
        "qubit_relax": np.sqrt(r["qubit_relax"]) * np.kron(SIGMA_MINUS, eye_c),
        "qubit_dephase": np.sqrt(r["qubit_dephase"] / 2) * np.kron(eye_q - SIGMA_Z, eye_c),
        "cavity_relax": np.sqrt(r["cavity_relax"]) * np.kron(eye_q, ops.a),
        "cavity_dephase": np.sqrt(2 * r["cavity_dephase"]) * np.kron(eye_q, ops.n),
    }
    return [built[k] for k in CHANNELS if k in noise.enabled]


# -- block integrator ---------------------------------------------------------

def to_blocks(rho_full: np.ndarray) -> np.ndarray:
    n = rho_full.shape[0] // 2
    s = (slice(0, n), slice(n, 2 * n))
    return np.stack([rho_full[s[E], s[E]], rho_full[s[E], s[G]], rho_full[s[G], s[G]]])


def from_blocks(b: np.ndarray) -> np.ndarray:
    ee, eg, gg = b
    n = ee.shape[0]
    out = np.empty((2 * n, 2 * n), dtype=complex)
    out[:n, :n], out[:n, n:], out[n:, :n], out[n:, n:] = ee, eg, eg.conj().T, gg
    return out


class _Dissipator:
    """Block dissipator; ``adjoint=True`` gives its Heisenberg-picture dual."""

    def __init__(self, rates: dict[str, float], dim: int, adjoint: bool = False):
        self.adjoint = adjoint
        self.g1 = rates["qubit_relax"]
        self.gphi = rates["qubit_dephase"]
        self.kappa = rates["cavity_relax"]
        k = np.arange(dim, dtype=float)
        self.sq = np.sqrt(k[1:])
        self.half_n = 0.5 * (k[:, None] + k[None, :])
        self.dephase = rates["cavity_dephase"] * (k[:, None] - k[None, :]) ** 2

    def cavity(self, y):
        out = -self.dephase * y
        if self.kappa:
            jump = np.zeros_like(y)
            if self.adjoint:
                jump[1:, 1:] = self.sq[:, None] * y[:-1, :-1] * self.sq[None, :]
            else:
                jump[:-1, :-1] = self.sq[:, None] * y[1:, 1:] * self.sq[None, :]
            out += self.kappa * (jump - self.half_n * y)
        return out

    def __call__(self, b):
        ee, eg, gg = b
        if self.adjoint:
            return np.stack([
                self.cavity(ee) - self.g1 * ee + self.g1 * gg,
                self.cavity(eg) - (0.5 * self.g1 + self.gphi) * eg,
                self.cavity(gg),
            ])
        return np.stack([
            self.cavity(ee) - self.g1 * ee,
            self.cavity(eg) - (0.5 * self.g1 + self.gphi) * eg,
            self.cavity(gg) + self.g1 * ee,
        ])


def _conjugator(u_e, u_g):
    ue_h, ug_h = u_e.conj().T, u_g.conj().T

    def apply(b):
        return np.stack([u_e @ b[0] @ ue_h, u_e @ b[1] @ ug_h, u_g @ b[2] @ ug_h])

    return apply


def evolve_blocks(blocks: np.ndarray, beta: complex, noise: NoiseParams | None,
                  steps: int | None = None, adjoint: bool = False) -> np.ndarray:
    """Noisy CD(beta) on a block state over one gate time.

    With ``adjoint`` the dual (Heisenberg-picture) map is applied to an observable.
    """
    dim = blocks.shape[-1]
    sign = -1 if adjoint else 1
    if noise is None or not noise.enabled:
        return _conjugator(*cd_blocks(sign * beta, dim))(blocks)
    steps = steps or noise.integrator_steps
    h = 1.0 / steps
    phi = _conjugator(*cd_blocks(sign * beta * h / 2, dim))
    diss = _Dissipator(noise.rates(), dim, adjoint)
    y = blocks
    tr0 = np.real(np.trace(y[0]) + np.trace(y[2]))
    for _ in range(steps):
        v = phi(y)
        k1 = phi(diss(y))
        k2 = diss(v + 0.5 * h * k1)
        k3 = diss(v + 0.5 * h * k2)
        k4 = diss(phi(v + h * k3))
        y = phi(v + h / 6 * (k1 + 2 * k2 + 2 * k3)) + h / 6 * k4
    tr1 = np.real(np.trace(y[0]) + np.trace(y[2]))
    if not adjoint and abs(tr1 - tr0) > 1e-6 * max(abs(tr0), 1e-300):
        raise IntegratorError(f"trace drifted from {tr0:.12f} to {tr1:.12f}")
    y[0] = 0.5 * (y[0] + y[0].conj().T)
    y[2] = 0.5 * (y[2] + y[2].conj().T)
    return y


def noisy_controlled_displacement(rho: np.ndarray, beta: complex, noise: NoiseParams | None,
                                  config: HilbertConfig | int | None = None,
                                  steps: int | None = None) -> np.ndarray:
    """Integrate the master equation of CD(beta) over T_CD on a qubit x cavity state."""
    return from_blocks(evolve_blocks(to_blocks(rho), beta, noise, steps))


def liouvillian(beta: complex, noise: NoiseParams | None, dim: int) -> np.ndarray:
    """Dense Liouvillian (column-stacking convention) for small-dimension cross-checks."""
    ops = make_operators(HilbertConfig(dim))
    gen = (1j * beta * ops.a_dag - 1j * np.conj(beta) * ops.a) / (2 * np.sqrt(2))
    h = np.kron(SIGMA_Z, gen)
    eye = np.eye(2 * dim)
    lv = -1j * (np.kron(eye, h) - np.kron(h.T, eye))
    for c in (collapse_operators(noise, dim) if noise else []):
        cdc = c.conj().T @ c
        lv += np.kron(c.conj(), c) - 0.5 * (np.kron(eye, cdc) + np.kron(cdc.T, eye))
    return lv


def lindblad_expm(rho: np.ndarray, beta: complex, noise: NoiseParams | None) -> np.ndarray:
    """Reference propagation by exponentiating the Liouvillian (small dims only)."""
    from scipy.linalg import expm

    n = rho.shape[0]
    vec = expm(liouvillian(beta, noise, n // 2)) @ rho.reshape(-1, order="F")
    return vec.reshape(n, n, order="F")


# -- noisy subrounds ----------------------------------------------------------

@lru_cache(maxsize=64)
def _subround_parts(delta: float, dim: int, quadrature: str, j: int):
    params = SbsParams(delta, (j, j), HilbertConfig(dim))
    small, big = cd_amplitudes(params, quadrature)
    cs = cd_blocks(small, dim)
    r = rx_matrix(np.pi / 2)
    plus = qubit_projectors()["plus"]
    # (R_x(pi/2) CD(small) |+>)_c as cavity operators M_c
    m = [sum(r[c, d] * plus[d] * cs[d] for d in (E, G)) for c in (E, G)]
    r_out = rx_matrix(params.nu(quadrature) * np.pi / 2).conj().T
    fb = {b: feedback_displacement(b, quadrature, params) for b in (BIT_G, BIT_E)}
    return m, big, r_out, fb


class NoisyChannel:
    """Subround maps with a noisy big CD and ideal small CDs and rotations."""

    def __init__(self, params: SbsParams, noise: NoiseParams | None):
        self.params = params
        self.noise = noise

    def _evolve(self, rho, quadrature, j):
        m, big, r_out, fb = _subround_parts(self.params.delta, self.params.dim, quadrature, j)
        me, mg = m
        me_h, mg_h = me.conj().T, mg.conj().T
        blocks = np.stack([me @ rho @ me_h, me @ rho @ mg_h, mg @ rho @ mg_h])
        zee, zeg, zgg = evolve_blocks(blocks, big, self.noise)
        out = []
        for b, row in ((BIT_G, G), (BIT_E, E)):
            x = r_out[row, E] * np.conj(r_out[row, G]) * zeg
            w = abs(r_out[row, E]) ** 2 * zee + abs(r_out[row, G]) ** 2 * zgg + x + x.conj().T
            out.append(fb[b] @ w @ fb[b].conj().T)
        return out

    def split(self, rho, quadrature, j):
        """Unnormalized (g, e) post-measurement cavity states."""
        return self._evolve(rho, quadrature, j)

    def _dual(self, xs, quadrature, j):
        """Adjoint map summed over the outcomes paired with the observables ``xs``."""
        m, big, r_out, fb = _subround_parts(self.params.delta, self.params.dim, quadrature, j)
        blocks = 0
        for b, x in xs:
            row = G if b == BIT_G else E
            xb = fb[b].conj().T @ x @ fb[b]
            re_, rg = r_out[row, E], r_out[row, G]
            blocks = blocks + np.stack([abs(re_) ** 2 * xb, np.conj(re_) * rg * xb,
                                        abs(rg) ** 2 * xb])
        aee, aeg, agg = evolve_blocks(blocks, big, self.noise, adjoint=True)
        me, mg = m
        me_h, mg_h = me.conj().T, mg.conj().T
        cross = me_h @ aeg @ mg
        return me_h @ aee @ me + mg_h @ agg @ mg + cross + cross.conj().T

    def dual_split(self, x, quadrature, j):
        """Heisenberg-picture (g, e) maps applied to the observable x."""
        return [self._dual([(b, x)], quadrature, j) for b in (BIT_G, BIT_E)]

    def dual_average(self, x, quadrature, j):
        return self._dual([(BIT_G, x), (BIT_E, x)], quadrature, j)

    def average(self, rho, quadrature, j):
        rg, re = self._evolve(rho, quadrature, j)
        return rg + re

    def weights(self, rho, quadrature, j):
        return [float(np.real(np.trace(r))) for r in self._evolve(rho, quadrature, j)]


def noisy_sbs_round(rho: np.ndarray, params: SbsParams, noise: NoiseParams | None,
                    bits: tuple[int, int] | None = None):
    """One q-then-p round; averaged if ``bits`` is None, else conditioned on (b_q, b_p).

    Returns the state, or (state, weight) when conditioned.
    """
    ch = NoisyChannel(params, noise)
    weight = 1.0
    for k, (quad, j) in enumerate(round_schedule(params.gauge)):
        if bits is None:
            rho = ch.average(rho, quad, j)
        else:
            branch = ch.split(rho, quad, j)[bits[k]]
            w = float(np.real(np.trace(branch)))
            weight *= w
            rho = branch / w
    return rho if bits is None else (rho, weight)


def noisy_steady_state(params: SbsParams, noise: NoiseParams | None, rounds: int = 100,
                       initial: np.ndarray | None = None) -> np.ndarray:
    """Autonomous noisy stabilization from vacuum."""
    rho = vacuum(params.dim) if initial is None else initial
    gauge = params.gauge
    for _ in range(rounds):
        rho = noisy_sbs_round(rho, params.with_gauge(gauge), noise)
        gauge = next_gauge(gauge)
    return 0.5 * (rho + rho.conj().T)


# -- relaxation toy model -----------------------------------------------------

P_RELAX = np.array([[0, 0], [1, 1]], dtype=complex)
"""|g><g| + |g><e| in the (e, g) basis."""


def toy_kraus(zeta: float, params: SbsParams, quadrature: str = "q", bit: int = BIT_G):
    """<b| U_zeta |+> with CD(big) -> CD(zeta big) P CD((1 - zeta) big)."""
    if not 0 <= zeta <= 1:
        raise ValueError("zeta must lie in [0, 1]")
    dim = params.dim
    small, big = cd_amplitudes(params, quadrature)
    nu = params.nu(quadrature)
    cd_s = controlled_displacement(small, dim)
    u = (cd_s
         @ np.kron(rx_matrix(nu * np.pi / 2).conj().T, np.eye(dim))
         @ controlled_displacement(zeta * big, dim)
         @ np.kron(P_RELAX, np.eye(dim))
         @ controlled_displacement((1 - zeta) * big, dim)
         @ np.kron(rx_matrix(np.pi / 2), np.eye(dim))
         @ cd_s)
    plus = qubit_projectors()["plus"]
    row = G if bit == BIT_G else E
    blocks = u.reshape(2, dim, 2, dim)[row]
    return np.einsum("ibj,b->ij", blocks, plus)


def relaxation_toy_event(rho: np.ndarray, zeta: float, params: SbsParams,
                         quadrature: str = "q", bit: int = BIT_G) -> np.ndarray:
    """Normalized post-measurement state when the qubit relaxes at fraction zeta of the big CD."""
    k = toy_kraus(zeta, params, quadrature, bit)
    out = k @ rho @ k.conj().T
    return out / np.real(np.trace(out))
