"""Shared domain types: RNG streams, particle sets and the simulator model contract."""

from __future__ import annotations

import json
import os
from abc import ABC, abstractmethod
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Any, Callable, Iterator, Optional, Sequence

import numpy as np

__all__ = [
    "RngStream",
    "spawn_streams",
    "as_generator",
    "Particle",
    "ParticleSet",
    "SimulatorModel",
    "SimulatorError",
    "NoAcceptancesError",
    "generate_particles",
    "n_threads",
]

_U64 = 2**64


class SimulatorError(RuntimeError):
    """Raised by a simulator when it cannot produce summaries for some parameters.

    ``indices`` holds the rows of the parameter batch that failed.
    """

    def __init__(self, message: str, indices: Optional[Sequence[int]] = None):
        super().__init__(message)
        self.indices = np.asarray(indices if indices is not None else [], dtype=int)


class NoAcceptancesError(RuntimeError):
    """Every particle received zero kernel weight."""

    def __init__(self, bandwidth: float, min_distance: float):
        super().__init__(
            f"no acceptances: bandwidth h={bandwidth:.6g} is below the "
            f"smallest distance {min_distance:.6g}"
        )
        self.bandwidth = bandwidth
        self.min_distance = min_distance


@dataclass(frozen=True)
class RngStream:
    """A reproducible random stream identified by ``(seed, stream_id)``.

    Streams are backed by the counter-based Philox generator keyed through
    :class:`numpy.random.SeedSequence`, so a stream's draws depend only on its
    seed and its position in the spawn tree.
    """

    seed: int
    stream_id: int = 0
    parent: tuple = ()

    def __post_init__(self):
        if not (0 <= int(self.seed) < _U64):
            raise ValueError(f"seed must be an unsigned 64-bit integer, got {self.seed}")
        if not (0 <= int(self.stream_id) < _U64):
            raise ValueError(f"stream_id must be an unsigned 64-bit integer, got {self.stream_id}")

    @property
    def key(self) -> tuple:
        return tuple(self.parent) + (int(self.stream_id),)

    def generator(self) -> np.random.Generator:
        seq = np.random.SeedSequence(int(self.seed), spawn_key=self.key)
        return np.random.Generator(np.random.Philox(seq))

    def spawn(self, n: int) -> list["RngStream"]:
        return spawn_streams(self, n)

    def child(self, i: int) -> "RngStream":
        return RngStream(self.seed, int(i), self.key)


def spawn_streams(root: RngStream, n: int) -> list[RngStream]:
    """Derive ``n`` child streams with ids ``0..n-1`` from ``root``."""
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    return [root.child(i) for i in range(n)]


def as_generator(random_state=None) -> np.random.Generator:
    """Coerce an int, RngStream, Generator or None into a Generator."""
    if isinstance(random_state, RngStream):
        return random_state.generator()
    if isinstance(random_state, np.random.Generator):
        return random_state
    if random_state is None or isinstance(random_state, (int, np.integer)):
        return RngStream(0 if random_state is None else int(random_state)).generator()
    raise TypeError(f"cannot build a random generator from {type(random_state).__name__}")


def n_threads() -> int:
    """Thread cap taken from ``ABC_THREADS`` (default 1)."""
    try:
        return max(1, int(os.environ.get("ABC_THREADS", "1")))
    except ValueError:
        return 1


@dataclass(frozen=True)
class Particle:
    theta: np.ndarray
    summary: np.ndarray
    weight: float


def _frozen(a, ndim: int) -> np.ndarray:
    a = np.array(a, dtype=float, copy=True)
    if a.ndim != ndim:
        raise ValueError(f"expected a {ndim}-d array, got shape {a.shape}")
    a.setflags(write=False)
    return a


@dataclass(frozen=True)
class ParticleSet:
    """Weighted draws ``(theta, s)`` stored column-wise.

    Parameters
    ----------
    theta : array of shape (r, p)
    summaries : array of shape (r, q); ``q`` may be 0 for parameter-only sets
    weights : array of shape (r,), optional
        Nonnegative weights; all ones when omitted.
    meta : dict
        Provenance: model id, seed, summary selection, adjustment history.
    """

    theta: np.ndarray
    summaries: np.ndarray
    weights: np.ndarray = None
    meta: dict = field(default_factory=dict)

    def __post_init__(self):
        theta = _frozen(self.theta, 2)
        summaries = np.asarray(self.summaries, dtype=float)
        if summaries.size == 0:
            summaries = np.zeros((theta.shape[0], 0))
        summaries = _frozen(summaries, 2)
        r = theta.shape[0]
        if r < 1:
            raise ValueError("a particle set needs at least one particle")
        if summaries.shape[0] != r:
            raise ValueError(f"theta has {r} rows but summaries have {summaries.shape[0]}")
        if not (np.all(np.isfinite(theta)) and np.all(np.isfinite(summaries))):
            raise ValueError("parameters and summaries must be finite")
        w =np.ones(r) if self.weights is None else self.weights
        w = _frozen(w, 1)
        if w.shape[0] != r:
            raise ValueError("weights length differs from particle count")
        if np.any(w < 0) or not np.all(np.isfinite(w)):
            raise ValueError("weights must be finite and nonnegative")
        object.__setattr__(self, "theta", theta)
        object.__setattr__(self, "summaries", summaries)
        object.__setattr__(self, "weights", w)
        object.__setattr__(self, "meta", dict(self.meta))

    @property
    def r(self) -> int:
        return self.theta.shape[0]

    @property
    def p(self) -> int:
        return self.theta.shape[1]

    @property
    def q(self) -> int:
        return self.summaries.shape[1]

    def __len__(self) -> int:
        return self.r

    def __iter__(self) -> Iterator[Particle]:
        for i in range(self.r):
            yield Particle(self.theta[i], self.summaries[i], float(self.weights[i]))

    def subset(self, index, **meta) -> "ParticleSet":
        return ParticleSet(self.theta[index], self.summaries[index], self.weights[index],
                           {**self.meta, **meta})

    def replace(self, theta=None, summaries=None, weights=None, adjustment=None, **meta) -> "ParticleSet":
        """Copy with some fields swapped; ``adjustment`` is appended to the history."""
        new_meta = {**self.meta, **meta}
        if adjustment is not None:
            new_meta["adjustments"] = list(self.meta.get("adjustments", [])) + [adjustment]
        return ParticleSet(
            self.theta if theta is None else theta,
            self.summaries if summaries is None else summaries,
            self.weights if weights is None else weights,
            new_meta,
        )

    # -- serialization ---------------------------------------------------

    def to_csv(self, path) -> None:
        """Write one row per particle (theta, summaries, weight) plus a JSON sidecar."""
        path = Path(path)
        header = ([f"theta_{j}" for j in range(self.p)]
                  + [f"s_{k}" for k in range(self.q)] + ["weight"])
        data = np.column_stack([self.theta, self.summaries, self.weights])
        np.savetxt(path, data, delimiter=",", header=",".join(header), comments="", fmt="%.17g")
        sidecar_path(path).write_text(json.dumps(_jsonable(self.meta), indent=2, sort_keys=True) + "\n")

    @classmethod
    def from_csv(cls, path) -> "ParticleSet":
        path = Path(path)
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        data = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        p = sum(h.startswith("theta_") for h in header)
        q = sum(h.startswith("s_") for h in header)
        if header[-1] != "weight" or p + q + 1 != len(header):
            raise ValueError(f"{path}: unrecognised particle CSV header")
        meta = {}
        side = sidecar_path(path)
        if side.exists():
            meta = json.loads(side.read_text())
        return cls(data[:, :p], data[:, p:p + q], data[:, -1], meta)


def sidecar_path(path) -> Path:
    path = Path(path)
    return path.with_name(path.stem + ".meta.json")


def _jsonable(obj: Any):
    if isinstance(obj, dict):
        return {str(k): _jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_jsonable(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _jsonable(obj.tolist())
    if isinstance(obj, np.integer):
        return int(obj)
    if isinstance(obj, np.floating):
        return float(obj)
    return obj


class SimulatorModel(ABC):
    """Prior sampler, prior log density and stochastic summary simulator.

    Subclasses implement the batched methods; all randomness must come from
    the generator that is passed in.
    """

    #: registry id
    name: str = "model"
    p: int
    q: int

    @abstractmethod
    def prior_sample(self, rng: np.random.Generator, n: int) -> np.ndarray:
        """Draw ``n`` parameter vectors, shape (n, p)."""

    @abstractmethod
    def prior_logdensity(self, theta) -> np.ndarray:
        """Unnormalised log prior; ``-inf`` outside the support."""

    @abstractmethod
    def simulate(self, theta: np.ndarray, rng: np.random.Generator) -> np.ndarray:
        """Summaries for a batch of parameters, shape (n, q).

        Raises
        ------
        SimulatorError
            When some rows cannot be simulated.
        """

    def simulate_summaries(self, theta, rng: np.random.Generator) -> np.ndarray:
        theta = np.asarray(theta, dtype=float)
        return self.simulate(theta[None, :], rng)[0]

    @property
    def observed_summaries(self) -> Optional[np.ndarray]:
        return None

    def marginal_selections(self) -> dict:
        """Per-parameter summary indices; defaults to every summary."""
        return {j: list(range(self.q)) for j in range(self.p)}

    def pair_selections(self) -> dict:
        """Per-pair summary indices: the union of the two marginal selections."""
        marg = self.marginal_selections()
        out = {}
        for i in range(self.p):
            for j in range(i + 1, self.p):
                out[(i, j)] = sorted(set(marg[i]) | set(marg[j]))
        return out

    def config(self) -> dict:
        return {}


Sampler = Callable[[np.random.Generator, int], np.ndarray]


def _simulate_chunk(model: SimulatorModel, sampler: Sampler, n: int, stream: RngStream,
                    max_retries: int) -> tuple[np.ndarray, np.ndarray]:
    rng = stream.generator()
    theta = np.asarray(sampler(rng, n), dtype=float)
    try:
        s = np.asarray(model.simulate(theta, rng), dtype=float)
    except SimulatorError as err:
        bad = set(err.indices.tolist()) if err.indices.size else set(range(n))
        s = np.empty((n, model.q))
        ok = np.array([i not in bad for i in range(n)])
        if ok.any():
            # the failing rows are re-drawn on their own sub-streams below
            s[ok] = model.simulate(theta[ok], stream.child(n).generator())
        for i in sorted(bad):
            theta[i], s[i] = _retry_particle(model, sampler, stream.child(i), max_retries)
    return theta, s


def _retry_particle(model, sampler, stream: RngStream, max_retries: int):
    for attempt in range(max_retries):
        rng = stream.child(attempt).generator()
        th = np.asarray(sampler(rng, 1), dtype=float)
        try:
            return th[0], model.simulate(th, rng)[0]
        except SimulatorError:
            continue
    raise SimulatorError(f"simulator failed {max_retries} times in a row (stream {stream.key})")


def generate_particles(model: SimulatorModel, n: int, rng: RngStream, proposal: Optional[Sampler] = None,
                       chunk_size: int = 8192, max_retries: int = 20,
                       n_jobs: Optional[int] = None) -> ParticleSet:
    """Draw ``n`` pairs ``theta ~ proposal`` (prior by default), ``s ~ p(s | theta)``.

    Work is split into fixed-size chunks with one sub-stream each, so the
    result does not depend on ``n_jobs``. Rows failing in the simulator are
    redrawn on fresh sub-streams up to ``max_retries`` times.
    """
    if n < 1:
        raise ValueError(f"n must be >= 1, got {n}")
    if not isinstance(rng, RngStream):
        raise TypeError("generate_particles needs an RngStream for reproducibility")
    sampler = proposal if proposal is not None else model.prior_sample
    sizes = [min(chunk_size, n - start) for start in range(0, n, chunk_size)]
    streams = spawn_streams(rng, len(sizes))
    n_jobs = n_threads() if n_jobs is None else n_jobs
    work = lambda args: _simulate_chunk(model, sampler, args[0], args[1], max_retries)  # noqa: E731
    if n_jobs > 1 and len(sizes) > 1:
        with ThreadPoolExecutor(max_workers=n_jobs) as pool:
            parts = list(pool.map(work, zip(sizes, streams)))
    else:
        parts = [work(a) for a in zip(sizes, streams)]
    theta = np.concatenate([t for t, _ in parts])
    s = np.concatenate([x for _, x in parts])
    meta = {"model": model.name, "seed": rng.seed, "stream": list(rng.key), "n": n,
            "adjustments": []}
    return ParticleSet(theta, s, None, meta)
