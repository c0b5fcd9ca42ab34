"""Bitstring probability tables and the estimators built on them."""

from __future__ import annotations

import csv
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from itertools import product

import numpy as np
from scipy.special import erfc

from .errors import DegenerateDerivative, ResourceError, SupportError
from .fock import L, displace_state
from .sbs import SbsParams, averaged_subround, kraus_set, subround_schedule

CACHE_VERSION = 1
DEFAULT_MAX_ENTRIES = 2 ** 10 * 401


class DisplacementGrid:
    """Strictly increasing grid of raw quadrature displacements, symmetric about 0."""

    def __init__(self, values):
        v = np.asarray(values, dtype=float)
        if v.ndim != 1 or v.size < 1:
            raise ValueError("grid needs at least one value")
        if np.any(np.diff(v) <= 0):
            raise ValueError("grid values must be strictly increasing")
        if not np.allclose(v, -v[::-1], atol=1e-12):
            raise ValueError("grid must be symmetric about 0")
        self.values = v
        self.values.setflags(write=False)

    @classmethod
    def linspace(cls, half_width: float, count: int) -> "DisplacementGrid":
        return cls(np.linspace(-half_width, half_width, count))

    @classmethod
    def mle_default(cls, count: int = 51) -> "DisplacementGrid":
        return cls.linspace(L / 4, count)

    @classmethod
    def bayes_default(cls, count: int = 161) -> "DisplacementGrid":
        return cls.linspace(L, count)

    @property
    def spacing(self) -> float:
        return float(self.values[1] - self.values[0]) if self.values.size > 1 else 0.0

    def index(self, x0: float) -> int:
        i = int(np.argmin(np.abs(self.values - x0)))
        if abs(self.values[i] - x0) > 1e-9 * max(1.0, abs(x0)):
            raise ValueError(f"{x0} is not a grid point")
        return i

    def __len__(self):
        return self.values.size

    def __eq__(self, other):
        return isinstance(other, DisplacementGrid) and np.array_equal(self.values, other.values)


def bitstrings(t_rounds: int) -> list[str]:
    """All length-T outcome strings, first round leftmost, 'g' sorting first."""
    return ["".join(bits) for bits in product("ge", repeat=t_rounds)]


@dataclass
class ProbabilityTable:
    grid: DisplacementGrid
    t_rounds: int
    quadrature: str
    probs: np.ndarray
    metadata: dict = field(default_factory=dict)

    def __post_init__(self):
        self.probs = np.asarray(self.probs, dtype=float)
        if self.probs.shape != (len(self.grid), 2 ** self.t_rounds):
            raise ValueError(f"probs shape {self.probs.shape} does not match grid and T")

    @property
    def labels(self) -> list[str]:
        return bitstrings(self.t_rounds)

    def row(self, x0: float) -> np.ndarray:
        return self.probs[self.grid.index(x0)]

    def marginal(self, t_rounds: int) -> "ProbabilityTable":
        """Table for the first ``t_rounds`` bits (later bits summed out)."""
        if not 1 <= t_rounds <= self.t_rounds:
            raise ValueError("cannot marginalize to more rounds than measured")
        p = self.probs.reshape(len(self.grid), 2 ** t_rounds, -1).sum(axis=2)
        return ProbabilityTable(self.grid, t_rounds, self.quadrature, p, dict(self.metadata))

    def to_csv(self, path) -> None:
        from .io import format_float
        with open(path, "w", newline="", encoding="utf-8") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["q0" if self.quadrature == "q" else "p0", "bitstring", "probability"])
            labels = self.labels
            for x, row in zip(self.grid.values, self.probs):
                for lab, pr in zip(labels, row):
                    w.writerow([format_float(x), lab, format_float(pr)])

    @classmethod
    def from_csv(cls, path, quadrature: str | None = None) -> "ProbabilityTable":
        with open(path, newline="", encoding="utf-8") as fh:
            rows = list(csv.reader(fh))
        head, body = rows[0], rows[1:]
        quad = quadrature or ("q" if head[0] == "q0" else "p")
        xs = sorted({float(r[0]) for r in body})
        t = len(body[0][1])
        idx = {lab: k for k, lab in enumerate(bitstrings(t))}
        pos = {x: i for i, x in enumerate(xs)}
        probs = np.zeros((len(xs), 2 ** t))
        for x, lab, pr in body:
            probs[pos[float(x)], idx[lab]] = float(pr)
        return cls(DisplacementGrid(xs), t, quad, probs)

    def save(self, path) -> None:
        np.savez(path, version=CACHE_VERSION, grid=self.grid.values, t_rounds=self.t_rounds,
                 quadrature=self.quadrature, probs=self.probs)

    @classmethod
    def load(cls, path) -> "ProbabilityTable":
        with np.load(path) as d:
            if int(d["version"]) != CACHE_VERSION:
                raise ValueError(f"cache {path} has version {int(d['version'])}")
            return cls(DisplacementGrid(d["grid"]), int(d["t_rounds"]), str(d["quadrature"]),
                       d["probs"])


# -- exact probabilities ------------------------------------------------------

class KrausChannel:
    """Noiseless subround maps built from cached Kraus operators."""

    def __init__(self, params: SbsParams):
        self.params = params

    def split(self, rho, quadrature, j):
        ks = kraus_set(self.params, quadrature, j)
        return [k @ rho @ kh for k, kh in zip(ks.full, ks.full_h)]

    def average(self, rho, quadrature, j):
        return averaged_subround(rho, quadrature, self.params, j)

    def weights(self, rho, quadrature, j):
        ks = kraus_set(self.params, quadrature, j)
        return [float(np.real(np.sum(m.T * rho))) for m in ks.effect]

    def dual_split(self, x, quadrature, j):
        ks = kraus_set(self.params, quadrature, j)
        return [kh @ x @ k for k, kh in zip(ks.full, ks.full_h)]

    def dual_average(self, x, quadrature, j):
        ks = kraus_set(self.params, quadrature, j)
        return sum(kh @ x @ k for k, kh in zip(ks.full, ks.full_h))


def make_channel(params: SbsParams, noise=None):
    if noise is None:
        return KrausChannel(params)
    from .noise import NoisyChannel
    return NoisyChannel(params, noise)


def measurement_schedule(t_rounds: int, quadrature: str, gauge=(0, 0)):
    """Subrounds up to the last measured one, flagged as measured or averaged."""
    sched = [(quad, j, quad == quadrature) for quad, j in subround_schedule(t_rounds, gauge)]
    while not sched[-1][2]:
        sched.pop()
    return sched


def _tree_probabilities(rho, schedule, channel) -> np.ndarray:
    """Depth-first evaluation of all outcome weights; shared prefixes computed once."""
    out: list[float] = []

    def walk(state, pos):
        while not schedule[pos][2]:
            quad, j, _ = schedule[pos]
            state = channel.average(state, quad, j)
            pos += 1
        quad, j, _ = schedule[pos]
        if pos == len(schedule) - 1:
            out.extend(channel.weights(state, quad, j))
            return
        for child in channel.split(state, quad, j):
            walk(child, pos + 1)

    walk(rho, 0)
    return np.array(out)


def _effect_probabilities(states: np.ndarray, schedule, channel) -> np.ndarray:
    """Outcome weights of every state via backward-propagated effects.

    Each bitstring's effect E_b is built once by walking the schedule in reverse
    with the dual maps; p(b|x) = tr(E_b rho_x) is then one product against the
    stacked states.
    """
    n_meas = sum(1 for *_, m in schedule if m)
    flat = states.reshape(states.shape[0], -1)
    out = np.zeros((states.shape[0], 2 ** n_meas))

    def walk(x, pos, index, depth):
        while pos >= 0 and not schedule[pos][2]:
            quad, j, _ = schedule[pos]
            x = channel.dual_average(x, quad, j)
            pos -= 1
        if pos < 0:
            out[:, index] = np.real(flat @ x.T.ravel())
            return
        quad, j, _ = schedule[pos]
        for bit, xb in enumerate(channel.dual_split(x, quad, j)):
            walk(xb, pos - 1, index + (bit << depth), depth + 1)

    walk(np.eye(states.shape[-1], dtype=complex), len(schedule) - 1, 0, 0)
    return out


def shift_amplitude(x0: float, quadrature: str) -> complex:
    """Coherent amplitude beta displacing the given quadrature by x0."""
    return x0 / np.sqrt(2) if quadrature == "q" else 1j * x0 / np.sqrt(2)


def _row_job(args):
    rho, x0, schedule, params, noise, quadrature = args
    channel = make_channel(params, noise)
    return _tree_probabilities(displace_state(rho, shift_amplitude(x0, quadrature)),
                               schedule, channel)


def _clean(p: np.ndarray) -> np.ndarray:
    p = np.where(p < 0, np.where(p >= -1e-12, 0.0, p), p)
    if np.any(p < 0):
        raise ValueError(f"negative probability {p.min():.2e}")
    return p / p.sum()


def bitstring_probabilities(initial_state: np.ndarray, grid: DisplacementGrid, t_rounds: int,
                            params: SbsParams, quadrature: str = "q", noise=None,
                            workers: int = 1, max_entries: int = DEFAULT_MAX_ENTRIES,
                            metadata: dict | None = None,
                            method: str = "effects") -> ProbabilityTable:
    """p(b | x0) for every length-T bitstring of the measured quadrature.

    The other quadrature's subrounds are applied with the qubit reset. With
    ``method="effects"`` the outcome effects are propagated backwards once and
    contracted with every displaced state. ``method="forward"`` walks the outcome
    tree separately from each displaced state, optionally over ``workers``
    processes; it is slower and serves as an independent check.
    """
    if method not in ("effects", "forward"):
        raise ValueError(f"unknown method {method!r}")
    if t_rounds < 1:
        raise ValueError("t_rounds must be >= 1")
    if 2 ** t_rounds * len(grid) > max_entries:
        raise ResourceError(f"2^{t_rounds} x {len(grid)} entries exceed budget {max_entries}")
    schedule = measurement_schedule(t_rounds, quadrature, params.gauge)
    jobs = [(initial_state, x0, schedule, params, noise, quadrature) for x0 in grid.values]
    if method == "effects":
        states = np.array([displace_state(initial_state, shift_amplitude(x0, quadrature))
                           for x0 in grid.values])
        rows = _effect_probabilities(states, schedule, make_channel(params, noise))
    elif workers > 1:
        with ProcessPoolExecutor(workers) as ex:
            rows = list(ex.map(_row_job, jobs))
    else:
        rows = [_row_job(j) for j in jobs]
    meta = {"delta": params.delta, "dim": params.dim, "noise": noise is not None,
            "method": method}
    meta.update(metadata or {})
    return ProbabilityTable(grid, t_rounds, quadrature, np.array([_clean(r) for r in rows]), meta)


# -- priors and estimators ----------------------------------------------------

@dataclass(frozen=True)
class Prior:
    kind: str
    width: float

    @classmethod
    def flat(cls, half_width: float = L / 4) -> "Prior":
        return cls("flat", half_width)

    @classmethod
    def gaussian(cls, sigma: float) -> "Prior":
        return cls("gaussian", sigma)

    def __post_init__(self):
        if self.kind not in ("flat", "gaussian") or self.width <= 0:
            raise ValueError(f"bad prior {self.kind}({self.width})")

    def weights(self, grid: DisplacementGrid) -> np.ndarray:
        """Trapezoidal quadrature weights of the prior density on the grid."""
        x = grid.values
        if self.kind == "flat":
            dens = (np.abs(x) <= self.width * (1 + 1e-12)).astype(float)
        else:
            dens = np.exp(-0.5 * (x / self.width) ** 2)
        w = dens * _trapz_weights(x)
        return w / w.sum()

    def tail_mass(self, half_width: float) -> float:
        if self.kind == "flat":
            return 0.0 if half_width >= self.width * (1 - 1e-12) else 1.0
        return float(erfc(half_width / (np.sqrt(2) * self.width)))


def _trapz_weights(x: np.ndarray) -> np.ndarray:
    if x.size == 1:
        return np.ones(1)
    dx = np.diff(x)
    w = np.zeros_like(x)
    w[:-1] += dx / 2
    w[1:] += dx / 2
    return w


@dataclass
class EstimatorTable:
    kind: str
    estimates: np.ndarray
    labels: list[str]

    def as_dict(self) -> dict[str, float]:
        return dict(zip(self.labels, map(float, self.estimates)))

    def __getitem__(self, bitstring: str) -> float:
        return float(self.estimates[self.labels.index(bitstring)])


def mle_estimators(table: ProbabilityTable, prior: Prior | None = None,
                   tie_rtol: float = 1e-12) -> EstimatorTable:
    """Per-bitstring argmax of p(b|x0) over the flat prior support.

    Ties within ``tie_rtol`` go to the smallest |x0|, then to the negative value.
    """
    prior = prior or Prior.flat(L / 4)
    if prior.kind != "flat":
        raise ValueError("maximum likelihood uses a flat prior")
    x = table.grid.values
    inside = np.abs(x) <= prior.width * (1 + 1e-12)
    if not np.any(inside):
        raise SupportError("flat prior support contains no grid points")
    xs, probs = x[inside], table.probs[inside]
    order = np.lexsort((xs, np.abs(xs)))
    est = np.empty(probs.shape[1])
    for k in range(probs.shape[1]):
        col = probs[:, k]
        best = col.max()
        tied = col >= best - tie_rtol * abs(best)
        est[k] = xs[order[np.argmax(tied[order])]]
    return EstimatorTable("mle", est, table.labels)


def bayes_estimators(table: ProbabilityTable, sigma: float,
                     tail_tol: float = 1e-4) -> EstimatorTable:
    """Posterior means under a Gaussian prior of standard deviation ``sigma``."""
    prior = Prior.gaussian(sigma)
    half = float(table.grid.values[-1])
    if prior.tail_mass(half) > tail_tol:
        raise SupportError(f"prior mass {prior.tail_mass(half):.2e} lies outside +-{half:.3g}")
    w = prior.weights(table.grid)
    joint = w[:, None] * table.probs
    z = joint.sum(axis=0)
    num = (table.grid.values[:, None] * joint).sum(axis=0)
    est = np.divide(num, z, out=np.zeros_like(num), where=z > 0)
    return EstimatorTable(f"bayes({sigma:.6g})", est, table.labels)


# -- figures of merit ---------------------------------------------------------

def _errors(table: ProbabilityTable, est: EstimatorTable) -> np.ndarray:
    return est.estimates[None, :] - table.grid.values[:, None]


def mse_curve(table, est) -> np.ndarray:
    return np.sum(table.probs * _errors(table, est) ** 2, axis=1)


def mse(table: ProbabilityTable, est: EstimatorTable, x0: float) -> float:
    i = table.grid.index(x0)
    return float(mse_curve(table, est)[i])


def averaged_mse(table: ProbabilityTable, est: EstimatorTable, prior: Prior) -> float:
    return float(np.dot(prior.weights(table.grid), mse_curve(table, est)))


def mse_variance(table: ProbabilityTable, est: EstimatorTable, prior: Prior) -> float:
    """Variance of the squared error over the joint draw of x0 (prior) and outcomes."""
    w = prior.weights(table.grid)
    sq = _errors(table, est) ** 2
    m1 = float(np.dot(w, np.sum(table.probs * sq, axis=1)))
    m2 = float(np.dot(w, np.sum(table.probs * sq ** 2, axis=1)))
    return m2 - m1 ** 2


def estimator_mean_curve(table, est) -> np.ndarray:
    return table.probs @ est.estimates


def _central_diff(values: np.ndarray, grid: DisplacementGrid, i: int):
    if not 0 < i < len(grid) - 1:
        raise ValueError("derivatives need an interior grid point")
    x = grid.values
    return (values[i + 1] - values[i - 1]) / (x[i + 1] - x[i - 1])


def fisher_curve(table: ProbabilityTable) -> np.ndarray:
    """Classical Fisher information at every interior grid point (NaN on the edges)."""
    x = table.grid.values
    out = np.full(len(x), np.nan)
    dp = (table.probs[2:] - table.probs[:-2]) / (x[2:] - x[:-2])[:, None]
    p = table.probs[1:-1]
    terms = np.divide(dp ** 2, p, out=np.zeros_like(p), where=p > 0)
    out[1:-1] = terms.sum(axis=1)
    return out


def fisher_information(table: ProbabilityTable, x0: float) -> float:
    i = table.grid.index(x0)
    if not 0 < i < len(table.grid) - 1:
        raise ValueError("derivatives need an interior grid point")
    return float(fisher_curve(table)[i])


def bias(table: ProbabilityTable, est: EstimatorTable, x0: float) -> float:
    i = table.grid.index(x0)
    return float(estimator_mean_curve(table, est)[i] - x0)


def mean_derivative(table: ProbabilityTable, est: EstimatorTable, x0: float) -> float:
    return float(_central_diff(estimator_mean_curve(table, est), table.grid, table.grid.index(x0)))


def sensitivity(table: ProbabilityTable, est: EstimatorTable, x0: float) -> float:
    """sqrt(E[(x~ - x0)^2]) / |d E[x~] / d x0|."""
    deriv = mean_derivative(table, est, x0)
    if abs(deriv) < 1e-10:
        raise DegenerateDerivative(f"estimator mean is flat at x0={x0}")
    return float(np.sqrt(mse(table, est, x0)) / abs(deriv))


def sensitivity_curve(table, est) -> np.ndarray:
    """Sensitivity at interior grid points (NaN on the edges or where degenerate)."""
    x = table.grid.values
    m = estimator_mean_curve(table, est)
    out = np.full(len(x), np.nan)
    d = (m[2:] - m[:-2]) / (x[2:] - x[:-2])
    rt = np.sqrt(mse_curve(table, est)[1:-1])
    ok = np.abs(d) >= 1e-10
    out[1:-1][ok] = rt[ok] / np.abs(d[ok])
    return out
