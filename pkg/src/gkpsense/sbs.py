"""sBs (small-Big-small) stabilization: unitaries, Kraus maps and rounds.

Operator ordering of one subround, right to left:

    U = CD(small) . R_x^dag(nu pi/2) . CD(big) . R_x(pi/2) . CD(small)

with the qubit starting in |+>. The primed unitary U' drops the leftmost
CD(small). Because CD is block diagonal in the qubit basis, the dropped factor
becomes the bit-dependent feedback F_b, the b-block of CD(small), applied after
the measurement Kraus operator: K_b = F_b K'_b.

Gauge bookkeeping: ``SbsParams.gauge = (j_q, j_p)`` is the gauge at the start
of a round. A q-subround uses j_q and then flips j_p; the p-subround uses the
flipped j_p and then flips j_q. Two rounds restore the starting gauge.
"""

from __future__ import annotations

import warnings
from dataclasses import dataclass, field, replace
from functools import lru_cache
from typing import NamedTuple

import numpy as np

from .errors import CompletenessError, ConvergenceWarning, ZeroProbability
from .fock import (
    E,
    G,
    HilbertConfig,
    L,
    cd_blocks,
    controlled_displacement,
    expect,
    hermitian_function,
    make_operators,
    qubit_projectors,
    qubit_rotation_x,
    vacuum,
)

QUADRATURES = ("q", "p")
BIT_G, BIT_E = 0, 1
_BLOCK = {BIT_G: G, BIT_E: E}


@dataclass(frozen=True)
class SbsParams:
    delta: float = 0.3
    gauge: tuple[int, int] = (0, 0)
    hilbert: HilbertConfig = field(default_factory=HilbertConfig)

    def __post_init__(self):
        if not 0 < self.delta < 1:
            raise ValueError(f"delta must lie in (0, 1), got {self.delta}")
        if len(self.gauge) != 2 or any(j not in (0, 1) for j in self.gauge):
            raise ValueError(f"gauge must be a pair of bits, got {self.gauge}")
        object.__setattr__(self, "gauge", tuple(int(j) for j in self.gauge))

    @property
    def dim(self) -> int:
        return self.hilbert.cavity_dim

    l = L

    @property
    def s(self) -> float:
        return float(np.sinh(self.delta ** 2))

    @property
    def c(self) -> float:
        return float(np.cosh(self.delta ** 2))

    @property
    def t(self) -> float:
        return float(np.tanh(self.delta ** 2))

    def j(self, quadrature: str) -> int:
        return self.gauge[_quad_index(quadrature)]

    def nu(self, quadrature: str) -> int:
        return -1 if self.j(quadrature) else 1

    def with_gauge(self, gauge) -> "SbsParams":
        return replace(self, gauge=tuple(gauge))

    def with_j(self, quadrature: str, j: int) -> "SbsParams":
        g = list(self.gauge)
        g[_quad_index(quadrature)] = j
        return replace(self, gauge=tuple(g))


def _quad_index(quadrature: str) -> int:
    try:
        return QUADRATURES.index(quadrature)
    except ValueError:
        raise ValueError(f"quadrature must be 'q' or 'p', got {quadrature!r}") from None


def cd_amplitudes(params: SbsParams, quadrature: str) -> tuple[complex, complex]:
    """(small, big) conditional-displacement amplitudes of one subround."""
    _quad_index(quadrature)
    small = params.l * params.s / 2
    if quadrature == "q":
        return complex(small), -1j * params.l * params.c
    return 1j * small, complex(params.l * params.c)


def sbs_unitary(params: SbsParams, quadrature: str, prime: bool = False) -> np.ndarray:
    """Full qubit x cavity subround unitary (U' without the final small CD if prime)."""
    dim = params.dim
    small, big = cd_amplitudes(params, quadrature)
    nu = params.nu(quadrature)
    cd_small = controlled_displacement(small, dim)
    u = (qubit_rotation_x(nu * np.pi / 2, dim).conj().T
         @ controlled_displacement(big, dim)
         @ qubit_rotation_x(np.pi / 2, dim)
         @ cd_small)
    return u if prime else cd_small @ u


def _project(u: np.ndarray, dim: int, bit: int) -> np.ndarray:
    plus = qubit_projectors()["plus"]
    blocks = u.reshape(2, dim, 2, dim)
    return np.einsum("ibj,b->ij", blocks[_BLOCK[bit]], plus)


def kraus_numeric(params: SbsParams, quadrature: str, check: bool = True):
    """(K_g, K_e) = <g/e| U' |+> from the explicitly multiplied unitary."""
    u = sbs_unitary(params, quadrature, prime=True)
    kg, ke = _project(u, params.dim, BIT_G), _project(u, params.dim, BIT_E)
    if check:
        err = np.max(np.abs(kg.conj().T @ kg + ke.conj().T @ ke - np.eye(params.dim)))
        if err > 1e-8:
            raise CompletenessError(f"POVM completeness violated by {err:.2e}")
    return kg, ke


def _frame(params: SbsParams, quadrature: str):
    """(x, y): the measured quadrature and its pi/2 rotation x_{pi/2}."""
    ops = make_operators(params.hilbert.cavity())
    return (ops.q, ops.p) if quadrature == "q" else (ops.p, -ops.q)


def kraus_analytic(params: SbsParams, quadrature: str):
    """Closed-form (K_g, K_e) in terms of rotated quadratures x_{+-theta}.

    K_{e/g} = e^{i nu pi/4}/sqrt2 [e^{-i phi} cos(l v x_theta/2 +- nu pi/4)
                                  - i e^{i phi} cos(l v x_{-theta}/2 +- nu pi/4)]
    with phi = pi s c / 8, v = sqrt(c^2 + s^2/4), theta = arctan(t/2).
    """
    s, c, l = params.s, params.c, params.l
    nu = params.nu(quadrature)
    phi = np.pi * s * c / 8
    v = np.sqrt(c ** 2 + s ** 2 / 4)
    theta = np.arctan(params.t / 2)
    x, y = _frame(params, quadrature)
    x_plus = np.cos(theta) * x + np.sin(theta) * y
    x_minus = np.cos(theta) * x - np.sin(theta) * y
    pref = np.exp(1j * nu * np.pi / 4) / np.sqrt(2)

    def branch(sign):
        shift = sign * nu * np.pi / 4
        ca = hermitian_function(x_plus, lambda w: np.cos(l * v * w / 2 + shift))
        cb = hermitian_function(x_minus, lambda w: np.cos(l * v * w / 2 + shift))
        return pref * (np.exp(-1j * phi) * ca - 1j * np.exp(1j * phi) * cb)

    return branch(-1), branch(+1)


def kraus_second_order(params: SbsParams, quadrature: str):
    """(K_g, K_e) expanded to second order in the envelope, with the exact global phase."""
    s, c, l = params.s, params.c, params.l
    nu = params.nu(quadrature)
    x, y = _frame(params, quadrature)
    weak = hermitian_function(y, lambda w: np.sin(l * s * w / 4))
    phase = np.exp(1j * (nu - 1) * np.pi / 4)

    def branch(sign):
        shift = sign * nu * np.pi / 4
        cos_x = hermitian_function(x, lambda w: np.cos(l * c * w / 2 + shift))
        sin_x = hermitian_function(x, lambda w: np.sin(l * c * w / 2 + shift))
        return phase * (cos_x - 1j * sin_x @ weak)

    return branch(-1), branch(+1)


def feedback_displacement(bit: int, quadrature: str, params: SbsParams) -> np.ndarray:
    """The b-block of the final CD(small): D(-+ small/2sqrt2) for g/e."""
    small, _ = cd_amplitudes(params, quadrature)
    e_block, g_block = cd_blocks(small, params.dim)
    return g_block if bit == BIT_G else e_block


class KrausSet(NamedTuple):
    """Cached per (delta, dim, quadrature, j): primed Kraus ops, feedback, and
    the full maps K_b = F_b K'_b with their effects K_b^dag K_b."""
    prime: tuple[np.ndarray, np.ndarray]
    feedback: tuple[np.ndarray, np.ndarray]
    full: tuple[np.ndarray, np.ndarray]
    full_h: tuple[np.ndarray, np.ndarray]
    effect: tuple[np.ndarray, np.ndarray]


@lru_cache(maxsize=64)
def _kraus_set(delta: float, dim: int, quadrature: str, j: int) -> KrausSet:
    params = SbsParams(delta, (j, j), HilbertConfig(dim))
    prime = kraus_numeric(params, quadrature)
    fb = tuple(feedback_displacement(b, quadrature, params) for b in (BIT_G, BIT_E))
    full = tuple(f @ k for f, k in zip(fb, prime))
    full_h = tuple(k.conj().T.copy() for k in full)
    effect = tuple(kh @ k for kh, k in zip(full_h, full))
    for m in (*prime, *fb, *full, *full_h, *effect):
        m.setflags(write=False)
    return KrausSet(prime, fb, full, full_h, effect)


def kraus_set(params: SbsParams, quadrature: str, j: int | None = None) -> KrausSet:
    j = params.j(quadrature) if j is None else j
    return _kraus_set(params.delta, params.dim, quadrature, j)


class SubroundOutcome(NamedTuple):
    bit: int
    weight: float
    post_state: np.ndarray


def conditioned_subround(rho: np.ndarray, bit: int, quadrature: str,
                         params: SbsParams) -> SubroundOutcome:
    """Measure one subround, keep outcome ``bit``: rho -> F_b K'_b rho K'_b^dag F_b^dag."""
    ks = kraus_set(params, quadrature)
    out = ks.full[bit] @ rho @ ks.full_h[bit]
    w = float(np.real(np.trace(out)))
    if w < 1e-14:
        raise ZeroProbability(f"outcome {bit} in {quadrature}-subround has weight {w:.2e}")
    return SubroundOutcome(bit, w, out / w)


def averaged_subround(rho: np.ndarray, quadrature: str, params: SbsParams,
                      j: int | None = None) -> np.ndarray:
    """Subround with the qubit reset instead of read out."""
    ks = kraus_set(params, quadrature, j)
    return sum(k @ rho @ kh for k, kh in zip(ks.full, ks.full_h))


def round_schedule(gauge) -> list[tuple[str, int]]:
    """(quadrature, j) for the two subrounds of a round starting at ``gauge``."""
    jq, jp = gauge
    return [("q", jq), ("p", 1 - jp)]


def next_gauge(gauge) -> tuple[int, int]:
    return (1 - gauge[0], 1 - gauge[1])


def subround_schedule(t_rounds: int, gauge=(0, 0)) -> list[tuple[str, int]]:
    out = []
    for _ in range(t_rounds):
        out += round_schedule(gauge)
        gauge = next_gauge(gauge)
    return out


def autonomous_round(rho: np.ndarray, params: SbsParams) -> np.ndarray:
    """One q-then-p round of autonomous stabilization starting at ``params.gauge``."""
    for quad, j in round_schedule(params.gauge):
        rho = averaged_subround(rho, quad, params, j)
    return rho


def stabilizer_operators(params: SbsParams) -> tuple[np.ndarray, np.ndarray]:
    """Finite-energy stabilizers E T E^{-1} with E = exp(-delta^2 n)."""
    ops = make_operators(params.hilbert.cavity())
    env = np.exp(-params.delta ** 2 * np.arange(params.dim))
    tq = hermitian_function(ops.q, lambda w: np.exp(1j * params.l * w))
    tp = hermitian_function(ops.p, lambda w: np.exp(-1j * params.l * w))
    return tuple(env[:, None] * t / env[None, :] for t in (tq, tp))


def stabilizer_expectation(rho: np.ndarray, params: SbsParams) -> tuple[complex, complex]:
    tq, tp = _stabilizers_cached(params.delta, params.dim)
    return expect(tq, rho), expect(tp, rho)


@lru_cache(maxsize=16)
def _stabilizers_cached(delta: float, dim: int):
    return stabilizer_operators(SbsParams(delta, (0, 0), HilbertConfig(dim)))


def prepare_qunaught(params: SbsParams, rounds: int = 120, drift_tol: float = 1e-3,
                     initial: np.ndarray | None = None) -> np.ndarray:
    """Autonomous stabilization from vacuum (or ``initial``) for ``rounds`` rounds."""
    if rounds < 1:
        raise ValueError("rounds must be >= 1")
    if initial is None:
        return _prepare_cached(params.delta, params.dim, params.gauge, rounds, drift_tol).copy()
    return _prepare(params, rounds, drift_tol, initial)


@lru_cache(maxsize=8)
def _prepare_cached(delta, dim, gauge, rounds, drift_tol):
    rho = _prepare(SbsParams(delta, gauge, HilbertConfig(dim)), rounds, drift_tol, vacuum(dim))
    rho.setflags(write=False)
    return rho


def _prepare(params, rounds, drift_tol, rho):
    gauge = params.gauge
    history = []
    for k in range(rounds):
        rho = autonomous_round(rho, params.with_gauge(gauge))
        gauge = next_gauge(gauge)
        if rounds - k <= 10 and gauge == params.gauge:
            history.append(np.array(stabilizer_expectation(rho, params)))
    if len(history) > 1 and np.max(np.abs(np.ptp(np.array(history), axis=0))) > drift_tol:
        warnings.warn("stabilizer expectations drifted over the last rounds",
                      ConvergenceWarning, stacklevel=3)
    return 0.5 * (rho + rho.conj().T)


# -- analytic probability models ----------------------------------------------

@dataclass(frozen=True)
class ProbFitParams:
    a1: float = 0.4
    a2: float = 1.24
    a3: float = 0.44

    def __post_init__(self):
        if min(self.a1, self.a2) <= 0 or self.a3 < 0:
            raise ValueError("fit constants must be positive")


SIMPLE_FIT = ProbFitParams(0.4, 1.24, 0.0)
REFINED_FIT = ProbFitParams(0.4, 1.44, 0.44)


def _contraction(x0: float, t_round: int, delta: float, fit: ProbFitParams, model: str):
    """Exponent factor exp(-f Delta^2 (T-1)) shrinking the initial displacement."""
    d2 = delta ** 2
    if model == "simple":
        return np.exp(-fit.a2 * d2 * (t_round - 1))
    if model != "refined":
        raise ValueError(f"unknown model {model!r}")
    # f(T) = a2 - a3 |sin(l x[T])|, x[T] = x0 exp(-f(T-1) Delta^2 (T-1)), x[1] = x0
    x = x0
    f = fit.a2 - fit.a3 * abs(np.sin(L * x))
    for t in range(2, t_round + 1):
        x = x0 * np.exp(-f * d2 * (t - 1))
        f = fit.a2 - fit.a3 * abs(np.sin(L * x))
    return np.exp(-f * d2 * (t_round - 1))


def predicted_mean_probability(x0: float, t_round: int, params: SbsParams,
                               fit: ProbFitParams = REFINED_FIT, model: str = "refined",
                               nu: int = 1) -> float:
    """Model probability of reading g in round ``t_round`` after an initial shift x0."""
    if t_round < 1:
        raise ValueError("t_round must be >= 1")
    shrink = _contraction(x0, t_round, params.delta, fit, model)
    contrast = np.exp(-fit.a1 * params.delta ** 2)
    return float(0.5 + 0.5 * nu * contrast * np.sin(params.l * params.c * x0 * shrink))


def fit_probability_model(x0: float, rounds, probs, params: SbsParams,
                          model: str = "refined", start: ProbFitParams = REFINED_FIT,
                          nus=None) -> ProbFitParams:
    """Least-squares refit of (a2, a3) to simulated probabilities, a1 held fixed."""
    from scipy.optimize import least_squares

    rounds = np.asarray(rounds)
    probs = np.asarray(probs, dtype=float)
    nus = np.ones_like(rounds) if nus is None else np.asarray(nus)

    def resid(a):
        fit = ProbFitParams(start.a1, a[0], a[1] if model == "refined" else 0.0)
        return [predicted_mean_probability(x0, int(t), params, fit, model, int(n)) - p
                for t, n, p in zip(rounds, nus, probs)]

    x_start = [start.a2, start.a3] if model == "refined" else [start.a2, 0.0]
    lb = [1e-6, 0.0] if model == "refined" else [1e-6, -1e-12]
    ub = [np.inf, np.inf] if model == "refined" else [np.inf, 1e-12]
    sol = least_squares(resid, x_start, bounds=(lb, ub))
    return ProbFitParams(start.a1, float(sol.x[0]), float(sol.x[1]) if model == "refined" else 0.0)


def qubit_plus_state(rho: np.ndarray) -> np.ndarray:
    """|+><+| tensor rho on qubit x cavity."""
    plus = qubit_projectors()["plus"]
    return np.kron(np.outer(plus, plus.conj()), rho)


def cavity_block(rho_full: np.ndarray, bit: int) -> np.ndarray:
    """<b| rho |b> for a qubit x cavity density matrix."""
    n = rho_full.shape[0] // 2
    i = _BLOCK[bit]
    return rho_full[i * n:(i + 1) * n, i * n:(i + 1) * n]


__all__ = [
    "BIT_E", "BIT_G", "QUADRATURES", "KrausSet", "ProbFitParams", "REFINED_FIT", "SIMPLE_FIT",
    "SbsParams", "SubroundOutcome", "autonomous_round", "averaged_subround", "cavity_block",
    "cd_amplitudes", "conditioned_subround", "feedback_displacement", "fit_probability_model",
    "kraus_analytic", "kraus_numeric", "kraus_second_order", "kraus_set", "next_gauge",
    "predicted_mean_probability", "prepare_qunaught", "qubit_plus_state", "round_schedule",
    "sbs_unitary", "stabilizer_expectation", "stabilizer_operators", "subround_schedule",
]
