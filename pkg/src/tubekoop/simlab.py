"""Ground-truth plants, parameter signals, data campaigns and metrics.

The two study plants are a Lorenz system with a time-varying second
parameter (integrated by fixed-step RK4) and a forced Van der Pol variant
(integrated by explicit Euler at the sampling time, RK4 by flag). Campaign
collection restarts episodes from random initial states so limit-cycle
plants still cover their domain box.
"""

from __future__ import annotations

from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import _kernels
from .edmd import SnapshotSet
from .lpv import ParamVaryingKoopman, predict


class ForecastUnavailable(Exception):
    """Raised when a parameter signal cannot cover the requested horizon.

    The receding-horizon controller assumes the scheduling parameter is known
    over the full prediction horizon; a schedule shorter than the run breaks
    that assumption and is rejected instead of extrapolated.
    """


# ---------------------------------------------------------------------------
# plants
# ---------------------------------------------------------------------------


def lorenz_deriv(x: np.ndarray, p: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array(
        [10.0 * (x[1] - x[0]), p * x[0] - x[1] - x[0] * x[2], x[0] * x[1] - x[2]]
    )


def vdp_deriv(x: np.ndarray, u: float, p: float) -> np.ndarray:
    x = np.asarray(x, dtype=float)
    return np.array(
        [2.0 * x[1], -0.8 * x[0] + p * (x[1] - 2.0 * x[0] ** 2 * x[1]) + u]
    )


def lorenz_step(x: np.ndarray, p: float, dt: float) -> np.ndarray:
    """One RK4 step with the parameter held constant over the step."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise ValueError("non-finite state")
    return _kernels.lorenz_rollout(x, np.array([float(p)]), dt)[1]


def vdp_step(x: np.ndarray, u: float, p: float, dt: float, method: str = "euler") -> np.ndarray:
    """One explicit-Euler step (RK4 with method="rk4")."""
    if dt <= 0:
        raise ValueError("dt must be positive")
    x = np.asarray(x, dtype=float)
    if not np.isfinite(x).all():
        raise ValueError("non-finite state")
    u_seq = np.array([float(u)])
    p_seq = np.array([float(p)])
    if method == "euler":
        return _kernels.vdp_rollout_euler(x, u_seq, p_seq, dt)[1]
    if method == "rk4":
        return _kernels.vdp_rollout_rk4(x, u_seq, p_seq, dt)[1]
    raise ValueError(f"unknown integration method {method!r}")


def lorenz_rollout(x0: np.ndarray, p_seq: np.ndarray, dt: float) -> np.ndarray:
    """Full RK4 trajectory, shape (len(p_seq) + 1, 3)."""
    return _kernels.lorenz_rollout(
        np.asarray(x0, dtype=float), np.asarray(p_seq, dtype=float).ravel(), dt
    )


def vdp_rollout(
    x0: np.ndarray,
    u_seq: np.ndarray,
    p_seq: np.ndarray,
    dt: float,
    method: str = "euler",
) -> np.ndarray:
    u = np.asarray(u_seq, dtype=float).ravel()
    p = np.asarray(p_seq, dtype=float).ravel()
    if u.size != p.size:
        raise ValueError("u_seq and p_seq must have equal length")
    x0 = np.asarray(x0, dtype=float)
    if method == "euler":
        return _kernels.vdp_rollout_euler(x0, u, p, dt)
    if method == "rk4":
        return _kernels.vdp_rollout_rk4(x0, u, p, dt)
    raise ValueError(f"unknown integration method {method!r}")


@dataclass
class PhysicalPlant:
    """Closed-loop simulation handle for one of the study plants."""

    kind: str
    dt: float
    method: str = "euler"

    def __post_init__(self):
        if self.kind not in ("lorenz", "vdp"):
            raise ValueError(f"unknown plant {self.kind!r}")

    @property
    def state_dim(self) -> int:
        return 3 if self.kind == "lorenz" else 2

    @property
    def input_dim(self) -> int:
        return 0 if self.kind == "lorenz" else 1

    def step(self, x: np.ndarray, u: np.ndarray | None, p: float) -> np.ndarray:
        if self.kind == "lorenz":
            return lorenz_step(x, p, self.dt)
        u_val = 0.0 if u is None else float(np.asarray(u).ravel()[0])
        return vdp_step(x, u_val, p, self.dt, self.method)


# ---------------------------------------------------------------------------
# parameter signals
# ---------------------------------------------------------------------------


@dataclass
class Constant:
    value: float

    def at_step(self, k: int, dt: float) -> float:
        return float(self.value)


@dataclass
class SumOfSines:
    """p(t) = offset + sum_i a_i sin(f_i t)."""

    offset: float
    amplitudes: np.ndarray
    frequencies: np.ndarray

    def __post_init__(self):
        self.amplitudes = np.asarray(self.amplitudes, dtype=float).ravel()
        self.frequencies = np.asarray(self.frequencies, dtype=float).ravel()
        if self.amplitudes.size != self.frequencies.size:
            raise ValueError("amplitudes and frequencies must have equal length")
        if (self.amplitudes <= 0).any():
            raise ValueError("amplitudes must be positive")

    def value(self, t: float) -> float:
        return float(self.offset + (self.amplitudes * np.sin(self.frequencies * t)).sum())

    def at_step(self, k: int, dt: float) -> float:
        return self.value(k * dt)


def make_sum_of_sines(
    seed_or_rng,
    offset: float = 25.0,
    num_terms: int = 20,
    amplitude_total: float = 5.0,
    freq_range: tuple[float, float] = (0.0, 10.0),
) -> SumOfSines:
    """Seeded excitation signal: amplitudes from a symmetric Dirichlet draw
    scaled to sum to ``amplitude_total``, frequencies uniform in ``freq_range``."""
    rng = (
        seed_or_rng
        if isinstance(seed_or_rng, np.random.Generator)
        else np.random.default_rng(seed_or_rng)
    )
    amps = rng.dirichlet(np.ones(num_terms)) * amplitude_total
    freqs = rng.uniform(freq_range[0], freq_range[1], size=num_terms)
    return SumOfSines(offset=offset, amplitudes=amps, frequencies=freqs)


@dataclass
class RandomWalk:
    """Bounded per-step random walk, deterministic given the seed.

    The k-th value is produced by clamping cumulative uniform increments of
    magnitude at most ``step_bound`` into ``bounds``; increments come from a
    dedicated seeded stream so any (seed, k) pair always yields the same value.
    """

    seed: int
    step_bound: float = 0.02
    bounds: tuple[float, float] = (1.0, 5.0)
    start: float | None = None
    _values: list = field(default_factory=list, repr=False)
    _rng: np.random.Generator | None = field(default=None, repr=False)

    def __post_init__(self):
        lo, hi = self.bounds
        if lo > hi:
            raise ValueError("bounds must satisfy lo <= hi")
        if self.step_bound < 0:
            raise ValueError("step_bound must be nonnegative")
        start = 0.5 * (lo + hi) if self.start is None else float(self.start)
        if not (lo <= start <= hi):
            raise ValueError("start must lie within bounds")
        self._values = [start]
        self._rng = np.random.default_rng(np.random.Philox(key=self.seed))

    def _extend_to(self, k: int) -> None:
        lo, hi = self.bounds
        while len(self._values) <= k:
            chunk = self._rng.uniform(-self.step_bound, self.step_bound, size=256)
            for d in chunk:
                self._values.append(min(max(self._values[-1] + d, lo), hi))

    def at_step(self, k: int, dt: float = 0.0) -> float:
        if k < 0:
            raise ValueError("step index must be nonnegative")
        self._extend_to(k)
        return float(self._values[k])


@dataclass
class Schedule:
    """Piecewise-constant schedule over [times[0], end_time]."""

    times: np.ndarray
    values: np.ndarray
    end_time: float | None = None

    def __post_init__(self):
        self.times = np.asarray(self.times, dtype=float).ravel()
        self.values = np.asarray(self.values, dtype=float).ravel()
        if self.times.size != self.values.size or self.times.size == 0:
            raise ValueError("times and values must be nonempty and equal length")
        if (np.diff(self.times) <= 0).any():
            raise ValueError("schedule times must be strictly increasing")
        if self.end_time is None:
            self.end_time = float(self.times[-1])

    def value(self, t: float) -> float:
        if t < self.times[0] - 1e-12 or t > self.end_time + 1e-12:
            raise ForecastUnavailable(
                f"schedule covers [{self.times[0]}, {self.end_time}] but t={t} was"
                " requested; the parameter forecast must cover the full prediction"
                " horizon"
            )
        idx = int(np.searchsorted(self.times, t + 1e-12, side="right") - 1)
        return float(self.values[max(idx, 0)])

    def at_step(self, k: int, dt: float) -> float:
        return self.value(k * dt)


ParameterSignal = Constant | SumOfSines | RandomWalk | Schedule


def sample_parameter(sig: ParameterSignal, t, dt: float = 0.0) -> float:
    """Evaluate a signal at a time (seconds) or, for RandomWalk, a step index."""
    if isinstance(sig, RandomWalk):
        return sig.at_step(int(t))
    if isinstance(sig, (SumOfSines, Schedule)):
        return sig.value(float(t))
    return sig.at_step(0, dt)


def forecast(sig: ParameterSignal, start_step: int, horizon: int, dt: float) -> np.ndarray:
    """Parameter values at steps start_step .. start_step + horizon - 1."""
    return np.array([sig.at_step(start_step + k, dt) for k in range(horizon)])


# ---------------------------------------------------------------------------
# identification campaigns
# ---------------------------------------------------------------------------


@dataclass
class EpisodeLog:
    """Raw log of one uninterrupted episode at a fixed working point."""

    times: np.ndarray
    states: np.ndarray  # (M, n)
    inputs: np.ndarray  # (M, m)
    working_point: float
    dt: float


def collect_identification_data(
    plant: str,
    working_point: float,
    duration: float,
    dt: float,
    domain_box,
    seed: int,
    restart_every: float | None = 10.0,
    input_range: tuple[float, float] | None = None,
    method: str = "euler",
) -> list[EpisodeLog]:
    """Simulate at a fixed working point with episodic restarts.

    Episodes restart from random initial states inside ``domain_box`` every
    ``restart_every`` seconds; transitions across episode boundaries never
    form snapshot pairs. Inputs (when the plant has any) are drawn uniformly
    from ``input_range`` per step.
    """
    if duration < dt:
        raise ValueError("duration must be at least one sampling interval")
    box = np.asarray(domain_box, dtype=float)
    rng = np.random.default_rng(seed)
    total = int(round(duration / dt))
    ep_len = total if restart_every is None else int(round(restart_every / dt))
    ep_len = max(ep_len, 2)

    episodes = []
    produced = 0
    while produced < total:
        count = min(ep_len, total - produced)
        if count < 2:
            break
        x0 = rng.uniform(box[:, 0], box[:, 1])
        if plant == "lorenz":
            p_seq = np.full(count - 1, float(working_point))
            states = lorenz_rollout(x0, p_seq, dt)
            inputs = np.zeros((count, 0))
        elif plant == "vdp":
            if input_range is None:
                raise ValueError("input_range is required for the vdp plant")
            inputs = rng.uniform(input_range[0], input_range[1], size=(count, 1))
            p_seq = np.full(count - 1, float(working_point))
            states = vdp_rollout(x0, inputs[:-1, 0], p_seq, dt, method)
        else:
            raise ValueError(f"unknown plant {plant!r}")
        # states has count rows after dropping the extra rollout endpoint.
        states = states[:count]
        times = produced * dt + dt * np.arange(count)
        episodes.append(
            EpisodeLog(
                times=times,
                states=states,
                inputs=inputs,
                working_point=float(working_point),
                dt=dt,
            )
        )
        produced += count
    return episodes


def snapshots_from_episodes(episodes: list[EpisodeLog]) -> SnapshotSet:
    """Pair consecutive samples within each episode into a snapshot set."""
    if not episodes:
        raise ValueError("no episodes given")
    wp = episodes[0].working_point
    dt = episodes[0].dt
    for ep in episodes:
        if ep.working_point != wp or ep.dt != dt:
            raise ValueError("episodes must share working point and dt")
    X = np.hstack([ep.states[:-1].T for ep in episodes])
    Xp = np.hstack([ep.states[1:].T for ep in episodes])
    U = np.hstack([ep.inputs[:-1].T for ep in episodes])
    return SnapshotSet(states=X, states_next=Xp, inputs=U, working_point=wp, dt=dt)


def split_episodes(
    episodes: list[EpisodeLog], validation_fraction: float = 0.2
) -> tuple[list[EpisodeLog], list[EpisodeLog]]:
    """Hold out trailing episodes (or a trailing slice of a lone episode)."""
    if not 0 < validation_fraction < 1:
        raise ValueError("validation_fraction must lie in (0, 1)")
    if len(episodes) == 1:
        ep = episodes[0]
        cut = int(round(ep.states.shape[0] * (1 - validation_fraction)))
        cut = min(max(cut, 2), ep.states.shape[0] - 2)
        head = EpisodeLog(ep.times[:cut], ep.states[:cut], ep.inputs[:cut], ep.working_point, ep.dt)
        tail = EpisodeLog(ep.times[cut:], ep.states[cut:], ep.inputs[cut:], ep.working_point, ep.dt)
        return [head], [tail]
    k = max(1, int(round(len(episodes) * validation_fraction)))
    k = min(k, len(episodes) - 1)
    return episodes[:-k], episodes[-k:]


# ---------------------------------------------------------------------------
# metrics
# ---------------------------------------------------------------------------


def rmse(reference: np.ndarray, predicted: np.ndarray) -> float:
    """Relative RMSE in percent: 100 ||vec(pred - ref)|| / ||vec(ref)||."""
    ref = np.asarray(reference, dtype=float)
    pred = np.asarray(predicted, dtype=float)
    if ref.shape != pred.shape:
        raise ValueError("reference and prediction must have the same shape")
    denom = np.linalg.norm(ref)
    if denom == 0.0:
        raise ValueError("reference trajectory has zero norm; relative RMSE undefined")
    return float(100.0 * np.linalg.norm(pred - ref) / denom)


def cumulative_cost(
    states: np.ndarray, inputs: np.ndarray, Qx: np.ndarray, R: np.ndarray
) -> np.ndarray:
    """Running sum of stage costs x'Qx x + u'R u over the applied steps."""
    X = np.atleast_2d(np.asarray(states, dtype=float))
    U = np.atleast_2d(np.asarray(inputs, dtype=float))
    if U.shape[0] not in (X.shape[0], X.shape[0] - 1):
        raise ValueError("inputs must have one row per applied step")
    T = U.shape[0]
    Qx = np.atleast_2d(np.asarray(Qx, dtype=float))
    R = np.atleast_2d(np.asarray(R, dtype=float))
    stage = np.einsum("ij,jk,ik->i", X[:T], Qx, X[:T])
    if U.shape[1] > 0:
        stage = stage + np.einsum("ij,jk,ik->i", U[:T], R, U[:T])
    return np.cumsum(stage)


# ---------------------------------------------------------------------------
# Monte Carlo prediction study
# ---------------------------------------------------------------------------


def monte_carlo_prediction(
    models: dict[str, ParamVaryingKoopman],
    trials: int,
    horizon_steps: int,
    dt: float,
    init_box,
    seed: int,
    signal_kwargs: dict | None = None,
    threads: int = 1,
) -> dict[str, dict]:
    """Open-loop prediction study on the Lorenz plant.

    Each trial draws an initial state from ``init_box`` and a fresh seeded
    sum-of-sines parameter signal, rolls the true plant for
    ``horizon_steps`` and scores each model's prediction by relative RMSE.
    Per-trial seeds are spawned deterministically so results do not depend on
    the worker-thread count.
    """
    if trials < 1:
        raise ValueError("trials must be at least 1")
    box = np.asarray(init_box, dtype=float)
    kwargs = dict(signal_kwargs or {})
    children = np.random.SeedSequence(seed).spawn(trials)
    names = list(models)

    def run_trial(i: int) -> dict[str, float]:
        rng = np.random.default_rng(children[i])
        x0 = rng.uniform(box[:, 0], box[:, 1])
        sig = make_sum_of_sines(rng, **kwargs)
        p_seq = np.array([sig.at_step(k, dt) for k in range(horizon_steps)])
        truth = lorenz_rollout(x0, p_seq, dt)
        return {name: rmse(truth, predict(models[name], x0, p_seq)) for name in names}

    if threads > 1:
        with ThreadPoolExecutor(max_workers=threads) as pool:
            rows = list(pool.map(run_trial, range(trials)))
    else:
        rows = [run_trial(i) for i in range(trials)]

    out = {}
    for name in names:
        vals = np.array([row[name] for row in rows])
        out[name] = {
            "mean": float(vals.mean()),
            "std": float(vals.std(ddof=1)) if trials > 1 else 0.0,
            "values": vals,
        }
    return out


