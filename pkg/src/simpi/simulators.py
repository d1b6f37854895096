"""Benchmark stochastic simulators: M/M/1 queue length and a 4-node message network."""
from __future__ import annotations

import heapq
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .data import ReplicatedDataset

# Arrival rates lambda_{i,j} (messages/s), row = origin node, column = destination.
NETWORK_RATES = np.array([
    [0.0, 40.0, 30.0, 35.0],
    [50.0, 0.0, 45.0, 15.0],
    [60.0, 15.0, 0.0, 20.0],
    [25.0, 30.0, 40.0, 0.0],
])


@dataclass(frozen=True)
class MM1Config:
    """Steady-state number in system for an M/M/1 queue with service rate 1."""

    x: float

    def __post_init__(self):
        if not 0.0 < self.x < 1.0:
            raise ValueError(f"M/M/1 arrival rate must lie in (0, 1), got {self.x}")


def mm1_sample(cfg: MM1Config, rng: np.random.Generator, size=None):
    """Draw Y with P(Y = k) = (1 - x) x^k, k = 0, 1, ..."""
    # numpy's geometric counts trials to first success, support 1, 2, ...
    return rng.geometric(1.0 - cfg.x, size=size) - 1


def ring_routes(n_nodes: int = 4) -> dict[tuple[int, int], tuple[int, ...]]:
    """Fewest-hop routes on the ring where edge e joins node e and node e+1 (mod n).

    Nodes and edges are 0-based here. Routes are tuples of edge indices;
    equal-length alternatives go to the one whose first edge has the lower index.
    """
    routes = {}
    for s in range(n_nodes):
        for t in range(n_nodes):
            if s == t:
                continue
            cw = tuple((s + k) % n_nodes for k in range((t - s) % n_nodes))
            ccw = tuple((s - 1 - k) % n_nodes for k in range((s - t) % n_nodes))
            if len(cw) != len(ccw):
                routes[s, t] = cw if len(cw) < len(ccw) else ccw
            else:
                routes[s, t] = cw if cw[0] < ccw[0] else ccw
    return routes


@dataclass(frozen=True)
class NetworkConfig:
    """Message network with exponential message lengths of mean ``x`` bits."""

    x: float
    rates: np.ndarray = field(default_factory=lambda: NETWORK_RATES.copy())
    processing: float = 0.001
    capacity: float = 275000.0
    speed: float = 150000.0
    edge_lengths: tuple = (100.0, 200.0, 300.0, 400.0)
    horizon: int = 30
    routes: dict = field(default_factory=ring_routes)

    def __post_init__(self):
        if not self.x > 0:
            raise ValueError(f"mean message length must be positive, got {self.x}")
        rates = np.asarray(self.rates, dtype=float)
        off = ~np.eye(rates.shape[0], dtype=bool)
        if np.any(rates[off] < 0) or rates[off].sum() <= 0:
            raise ValueError("arrival rates must be nonnegative with a positive total")

    def occupancy(self, edge: int, length: float) -> float:
        """Seconds a message of ``length`` bits holds ``edge``."""
        return length / self.capacity + self.edge_lengths[edge] / self.speed


_ARRIVE_EDGE, _EDGE_DONE = 0, 1


def network_delays(cfg: NetworkConfig, arrivals) -> np.ndarray:
    """Deliver a fixed list of external messages and return each one's delay.

    ``arrivals`` is a time-ordered sequence of ``(time, origin, destination,
    length_bits)`` with 0-based nodes. Each node adds a fixed processing
    latency; each edge carries one message at a time in FIFO order.
    """
    events: list = []
    seq = 0

    def push(t, kind, payload):
        nonlocal seq
        heapq.heappush(events, (t, seq, kind, payload))
        seq += 1

    n = len(arrivals)
    paths = []
    lengths = np.empty(n)
    start = np.empty(n)
    delays = np.full(n, np.nan)
    for k, (t, s, d, length) in enumerate(arrivals):
        paths.append(cfg.routes[s, d])
        lengths[k] = length
        start[k] = t
        # hop counter 0: processing at the origin node
        push(t + cfg.processing, _ARRIVE_EDGE, (k, 0))

    queues = [deque() for _ in cfg.edge_lengths]
    busy = [False] * len(cfg.edge_lengths)

    while events:
        t, _, kind, payload = heapq.heappop(events)
        if kind == _ARRIVE_EDGE:
            k, hop = payload
            path = paths[k]
            if hop == len(path):
                delays[k] = t - start[k]
                continue
            e = path[hop]
            if busy[e]:
                queues[e].append((k, hop))
            else:
                busy[e] = True
                push(t + cfg.occupancy(e, lengths[k]), _EDGE_DONE, (e, k, hop))
        elif kind == _EDGE_DONE:
            e, k, hop = payload
            push(t + cfg.processing, _ARRIVE_EDGE, (k, hop + 1))
            if queues[e]:
                k2, hop2 = queues[e].popleft()
                push(t + cfg.occupancy(e, lengths[k2]), _EDGE_DONE, (e, k2, hop2))
            else:
                busy[e] = False
    return delays


def network_sample(cfg: NetworkConfig, rng: np.random.Generator) -> float:
    """Mean delay of the first ``cfg.horizon`` external messages, network empty at t=0."""
    rates = np.asarray(cfg.rates, dtype=float).copy()
    np.fill_diagonal(rates, 0.0)
    n_nodes = rates.shape[0]
    flat = rates.ravel()
    total = flat.sum()
    prob = flat / total
    m = cfg.horizon
    # Later arrivals can only interfere with the tracked messages while those are
    # still in the network; simulate arrivals in blocks until a block begins after
    # every tracked message has left.
    times = np.cumsum(rng.exponential(1.0 / total, size=m))
    pairs = rng.choice(flat.size, size=m, p=prob)
    lens = rng.exponential(cfg.x, size=m)
    while True:
        arrivals = [(times[k], pairs[k] // n_nodes, pairs[k] % n_nodes, lens[k]) for k in range(len(times))]
        delays = network_delays(cfg, arrivals)
        if times[-1] > (times[:m] + delays[:m]).max():
            break
        extra = m
        times = np.concatenate([times, times[-1] + np.cumsum(rng.exponential(1.0 / total, size=extra))])
        pairs = np.concatenate([pairs, rng.choice(flat.size, size=extra, p=prob)])
        lens = np.concatenate([lens, rng.exponential(cfg.x, size=extra)])
    return float(delays[:m].mean())


SIMULATORS = ("mm1", "network")


def _check_point(sim: str, x: np.ndarray):
    if sim == "mm1":
        if x.size != 1 or not 0.0 < x[0] < 1.0:
            raise ValueError(f"design point {x.tolist()} outside the M/M/1 domain (0, 1)")
    elif sim == "network":
        if x.size != 1 or not x[0] > 0.0:
            raise ValueError(f"design point {x.tolist()} is not a positive mean message length")
    else:
        raise ValueError(f"unknown simulator {sim!r}; expected one of {SIMULATORS}")


def simulate(sim: str, x: float, reps: int, rng: np.random.Generator, **network_kw) -> np.ndarray:
    """``reps`` i.i.d. outputs of simulator ``sim`` at scalar input ``x``."""
    if sim == "mm1":
        return mm1_sample(MM1Config(float(x)), rng, size=reps).astype(float)
    if sim == "network":
        cfg = NetworkConfig(float(x), **network_kw)
        return np.array([network_sample(cfg, rng) for _ in range(reps)])
    raise ValueError(f"unknown simulator {sim!r}; expected one of {SIMULATORS}")


def generate_design(sim: str, design_points, reps: int, seed, **network_kw) -> ReplicatedDataset:
    """Run ``reps`` replications at each design point with independent streams.

    ``seed`` may be an int or a :class:`numpy.random.SeedSequence`.
    """
    if reps < 1:
        raise ValueError(f"reps must be at least 1, got {reps}")
    x = np.asarray(design_points, dtype=float).reshape(len(design_points), -1)
    for xi in x:
        _check_point(sim, xi)
    ss = seed if isinstance(seed, np.random.SeedSequence) else np.random.SeedSequence(seed)
    streams = ss.spawn(len(x))
    y = [simulate(sim, xi[0], reps, np.random.default_rng(s), **network_kw) for xi, s in zip(x, streams)]
    return ReplicatedDataset(x, y)
