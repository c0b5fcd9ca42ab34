"""Monte-Carlo backaction-evading loop and exact recovery-fidelity diagnostics.

One run: displace the sensor by a draw from the prior, measure T bits per
quadrature (q then p within each round, feedback right after each bit),
estimate with posterior means, undo the estimate with D(-(q~ + i p~)/sqrt2),
then stabilize for M autonomous rounds. The output state is the input of the
next run.
"""

from __future__ import annotations

from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from .errors import ResourceError, ZeroProbability
from .estimation import (
    DisplacementGrid,
    ProbabilityTable,
    bayes_estimators,
    bitstring_probabilities,
    make_channel,
)
from .fock import L, FidelityTarget, displace_state
from .io import canonical_json, emit_csv
from .noise import NoiseParams, noisy_steady_state
from .sbs import SbsParams, next_gauge, prepare_qunaught, round_schedule, subround_schedule

MAX_BUDGET_BITS = 12


@dataclass(frozen=True)
class BackactionConfig:
    t_rounds: int = 8
    m_rounds: int = 4
    n_repeats: int = 6
    sigma: float = 0.15 * L
    samples: int = 400
    seed: int = 0
    noise: NoiseParams | None = None
    params: SbsParams = field(default_factory=SbsParams)

    def __post_init__(self):
        if self.t_rounds < 1 or self.m_rounds < 0 or self.n_repeats < 1 or self.samples < 1:
            raise ValueError("need T >= 1, M >= 0, N >= 1 and samples >= 1")
        if self.sigma <= 0:
            raise ValueError("sigma must be positive")


def sensor_state(params: SbsParams, noise: NoiseParams | None = None) -> np.ndarray:
    """Initial sensor: the prepared qunaught, or the noisy steady state."""
    if noise is None:
        return prepare_qunaught(params)
    return noisy_steady_state(params, noise)


def _advance(gauge, rounds: int):
    for _ in range(rounds):
        gauge = next_gauge(gauge)
    return tuple(gauge)


def autonomous_rounds(rho, m_rounds, params, channel):
    """M autonomous rounds starting at ``params.gauge``; returns (state, gauge)."""
    gauge = params.gauge
    for _ in range(m_rounds):
        for quad, j in round_schedule(gauge):
            rho = channel.average(rho, quad, j)
        gauge = next_gauge(gauge)
    return rho, gauge


# -- trajectories -------------------------------------------------------------

def sample_trajectory(rho: np.ndarray, t_rounds: int, params: SbsParams,
                      noise: NoiseParams | None, rng: np.random.Generator,
                      channel=None):
    """Sample T rounds of bits; returns ((bits_q, bits_p), conditional state)."""
    if t_rounds == 0:
        return ("", ""), rho
    channel = channel or make_channel(params, noise)
    bits = {"q": [], "p": []}
    for quad, j in subround_schedule(t_rounds, params.gauge):
        g_branch, e_branch = channel.split(rho, quad, j)
        w_g = float(np.real(np.trace(g_branch)))
        w_e = float(np.real(np.trace(e_branch)))
        total = w_g + w_e
        if total <= 1e-14:
            raise ZeroProbability(f"both outcomes vanish in the {quad} subround")
        take_g = rng.random() * total < w_g
        branch, w = (g_branch, w_g) if take_g else (e_branch, w_e)
        if w <= 1e-14:
            raise ZeroProbability(f"sampled an outcome of weight {w:.2e}")
        bits[quad].append("g" if take_g else "e")
        rho = branch / w
    return ("".join(bits["q"]), "".join(bits["p"])), rho


def stream(seed: int, sample: int, repeat: int) -> np.random.Generator:
    """Counter-based generator for one (sample, repeat) cell."""
    ss = np.random.SeedSequence(seed, spawn_key=(sample, repeat))
    return np.random.Generator(np.random.Philox(ss))


# -- estimator tables ---------------------------------------------------------

@dataclass
class EstimatorBank:
    """Bayesian estimators for each quadrature, keyed by the gauge at measurement start."""
    tables: dict = field(default_factory=dict)

    def lookup(self, gauge, quad: str, bitstring: str) -> float:
        return self.tables[(tuple(gauge), quad)][bitstring]


def build_estimators(config: BackactionConfig, sensor: np.ndarray, gauges,
                     grid: DisplacementGrid | None = None) -> EstimatorBank:
    grid = grid or DisplacementGrid.bayes_default()
    bank = EstimatorBank()
    for gauge in gauges:
        params = config.params.with_gauge(gauge)
        for quad in "qp":
            table = bitstring_probabilities(sensor, grid, config.t_rounds, params, quad,
                                            noise=config.noise)
            bank.tables[(tuple(gauge), quad)] = bayes_estimators(table, config.sigma)
    return bank


def _run_gauges(config: BackactionConfig):
    gauges, g = [], tuple(config.params.gauge)
    for _ in range(config.n_repeats):
        if g not in gauges:
            gauges.append(g)
        g = _advance(g, config.t_rounds + config.m_rounds)
    return gauges


# -- the loop -----------------------------------------------------------------

@dataclass
class SampleRecord:
    q0: list
    p0: list
    bits: list
    estimates: list
    fidelity: list


def _sample_job(args) -> SampleRecord:
    config, index, sensor, bank, targets = args
    channel = make_channel(config.params, config.noise)
    rec = SampleRecord([], [], [], [], [])
    rho, gauge = sensor, tuple(config.params.gauge)
    for repeat in range(config.n_repeats):
        rng = stream(config.seed, index, repeat)
        q0, p0 = rng.normal(0.0, config.sigma, size=2)
        rho = displace_state(rho, (q0 + 1j * p0) / np.sqrt(2))
        params = config.params.with_gauge(gauge)
        (bq, bp), rho = sample_trajectory(rho, config.t_rounds, params, config.noise, rng,
                                          channel)
        gauge = _advance(gauge, config.t_rounds)
        qe = bank.lookup(params.gauge, "q", bq)
        pe = bank.lookup(params.gauge, "p", bp)
        rho = displace_state(rho, -(qe + 1j * pe) / np.sqrt(2))
        rho, gauge = autonomous_rounds(rho, config.m_rounds, config.params.with_gauge(gauge),
                                       channel)
        rho = 0.5 * (rho + rho.conj().T)
        rec.q0.append(float(q0))
        rec.p0.append(float(p0))
        rec.bits.append((bq, bp))
        rec.estimates.append((qe, pe))
        rec.fidelity.append(targets[gauge](rho))
    return rec


@dataclass
class RunRecord:
    config: BackactionConfig
    samples: list

    def errors(self, quad: str) -> np.ndarray:
        """Squared errors, shape (samples, repeats)."""
        k = 0 if quad == "q" else 1
        true = np.array([s.q0 if quad == "q" else s.p0 for s in self.samples])
        est = np.array([[e[k] for e in s.estimates] for s in self.samples])
        return (est - true) ** 2

    def mse(self, quad: str) -> np.ndarray:
        return self.errors(quad).mean(axis=0)

    def stderr(self, quad: str) -> np.ndarray:
        e = self.errors(quad)
        if e.shape[0] < 2:
            return np.full(e.shape[1], np.nan)
        return e.std(axis=0, ddof=1) / np.sqrt(e.shape[0])

    def mean_fidelity(self) -> np.ndarray:
        return np.array([s.fidelity for s in self.samples]).mean(axis=0)

    def rows(self):
        out = []
        for quad in "qp":
            for r, (m, s) in enumerate(zip(self.mse(quad), self.stderr(quad)), start=1):
                out.append((r, quad, float(m), float(s)))
        return out

    def to_csv(self, path) -> None:
        emit_csv(self.rows(), ["repeat", "quadrature", "mse", "stderr"], path)

    def summary(self) -> dict:
        c = self.config
        return {
            "t_rounds": c.t_rounds, "m_rounds": c.m_rounds, "n_repeats": c.n_repeats,
            "sigma": c.sigma, "samples": c.samples, "seed": c.seed,
            "delta": c.params.delta, "dim": c.params.dim, "noise": c.noise is not None,
            "mse_q": self.mse("q").tolist(), "mse_p": self.mse("p").tolist(),
            "stderr_q": self.stderr("q").tolist(), "stderr_p": self.stderr("p").tolist(),
            "fidelity": self.mean_fidelity().tolist(),
        }

    def to_json(self, path) -> None:
        with open(path, "w", encoding="utf-8") as fh:
            fh.write(canonical_json(self.summary()) + "\n")


def gauge_targets(sensor: np.ndarray, params: SbsParams, noise=None) -> dict:
    """Fidelity targets for both gauge classes reachable from ``params.gauge``."""
    channel = make_channel(params, noise)
    g0 = tuple(params.gauge)
    flipped, g1 = autonomous_rounds(sensor, 1, params, channel)
    return {g0: FidelityTarget(sensor), tuple(g1): FidelityTarget(0.5 * (flipped + flipped.conj().T))}


def run_backaction_sequence(config: BackactionConfig, workers: int = 1,
                            sensor: np.ndarray | None = None,
                            bank: EstimatorBank | None = None) -> RunRecord:
    """Monte-Carlo run of the loop; output is independent of ``workers``."""
    sensor = sensor_state(config.params, config.noise) if sensor is None else sensor
    bank = bank or build_estimators(config, sensor, _run_gauges(config))
    targets = gauge_targets(sensor, config.params, config.noise)
    jobs = [(config, i, sensor, bank, targets) for i in range(config.samples)]
    if workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            recs = list(ex.map(_sample_job, jobs, chunksize=max(1, len(jobs) // (4 * workers))))
    else:
        recs = [_sample_job(j) for j in jobs]
    return RunRecord(config, recs)


# -- recovery fidelity --------------------------------------------------------

@dataclass
class RecoveryCurve:
    q0: np.ndarray
    with_recovery: np.ndarray
    without_recovery: np.ndarray


def _recovery_point(rho, params, t_rounds, m_rounds, channel, q_est, targets):
    """Exact sum over the q bitstrings; p subrounds are outcome-averaged."""
    sched = subround_schedule(t_rounds, params.gauge)
    end_gauge = _advance(params.gauge, t_rounds)
    tail_params = params.with_gauge(end_gauge)
    target = targets[_advance(end_gauge, m_rounds)]
    acc = np.zeros(2)

    def walk(state, pos, bits):
        while pos < len(sched) and sched[pos][0] == "p":
            state = channel.average(state, *sched[pos])
            pos += 1
        if pos == len(sched):
            w = float(np.real(np.trace(state)))
            if w <= 1e-15:
                return
            state = state / w
            est = q_est["".join(bits)]
            for k, s in enumerate((displace_state(state, -est / np.sqrt(2)), state)):
                out, _ = autonomous_rounds(s, m_rounds, tail_params, channel)
                acc[k] += w * target(0.5 * (out + out.conj().T))
            return
        quad, j = sched[pos]
        for bit, child in zip("ge", channel.split(state, quad, j)):
            walk(child, pos + 1, bits + [bit])

    walk(rho, 0, [])
    return acc


def recovery_fidelity_curve(q0_grid, t_rounds: int, m_rounds: int, params: SbsParams,
                            sigma: float, noise: NoiseParams | None = None,
                            sensor: np.ndarray | None = None,
                            estimator_grid: DisplacementGrid | None = None,
                            max_bits: int = MAX_BUDGET_BITS) -> RecoveryCurve:
    """Bitstring-averaged fidelity with the sensor after a q0 kick, T bits, recovery and M rounds.

    The p estimate is not applied; with p0 = 0 it only adds estimation noise.
    """
    if t_rounds < 1 or m_rounds < 0:
        raise ValueError("need T >= 1 and M >= 0")
    if t_rounds > max_bits:
        raise ResourceError(f"T={t_rounds} exceeds the {max_bits}-bit budget")
    sensor = sensor_state(params, noise) if sensor is None else sensor
    grid = estimator_grid or DisplacementGrid.bayes_default()
    table: ProbabilityTable = bitstring_probabilities(sensor, grid, t_rounds, params, "q",
                                                      noise=noise)
    q_est = bayes_estimators(table, sigma).as_dict()
    channel = make_channel(params, noise)
    targets = gauge_targets(sensor, params, noise)
    q0 = np.asarray(q0_grid, dtype=float)
    vals = np.array([_recovery_point(displace_state(sensor, x / np.sqrt(2)), params, t_rounds,
                                     m_rounds, channel, q_est, targets) for x in q0])
    return RecoveryCurve(q0, vals[:, 0], vals[:, 1])


def prior_nodes(sigma: float, count: int = 9):
    """Gauss-Hermite nodes and weights for a centred Gaussian of std ``sigma``."""
    x, w = np.polynomial.hermite_e.hermegauss(count)
    return sigma * x, w / w.sum()


def weighted_recovery_fidelity(t_rounds: int, m_rounds: int, params: SbsParams, sigma: float,
                               noise: NoiseParams | None = None, nodes: int = 9,
                               sensor: np.ndarray | None = None) -> tuple[float, float]:
    """Prior-weighted averaged recovery fidelity (with, without recovery)."""
    x, w = prior_nodes(sigma, nodes)
    curve = recovery_fidelity_curve(x, t_rounds, m_rounds, params, sigma, noise, sensor)
    return float(w @ curve.with_recovery), float(w @ curve.without_recovery)
