"""Classical analogues: reverse-mode chain gradients and parameterized Markov chains.

A :class:`StochasticChain` is a product of local maps ``exp(theta_i H_i)`` on
bit strings, each ``H_i`` an infinitesimal-stochastic generator on one or two
bits. Because a classical configuration can be read without disturbing it, a
single sampled trajectory yields a reweighted gradient sample for every gate.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Sequence

import numpy as np
import scipy.linalg

from .ledger import CopyLedger
from .rng import as_generator

__all__ = [
    "ChainGate",
    "StochasticChain",
    "SamplePath",
    "markov_evaluate",
    "markov_exact_gradient",
    "markov_finite_difference",
    "sample_path",
    "sample_paths",
    "enumerate_paths",
    "path_gradient_sample",
    "path_gradient_samples",
    "markov_backprop_estimate",
    "random_generator",
    "random_chain",
    "chain_from_json",
    "chain_to_json",
    "load_chain",
    "ElementaryMap",
    "ChainCost",
    "reverse_mode_chain",
]

MAX_BITS = 16
TOL = 1e-10


def _local_index(configs: np.ndarray, n: int, support: tuple) -> np.ndarray:
    out = np.zeros_like(configs)
    for q in support:
        out = (out << 1) | ((configs >> (n - 1 - q)) & 1)
    return out


def _set_local(configs: np.ndarray, n: int, support: tuple, local: np.ndarray) -> np.ndarray:
    out = configs.copy()
    s = len(support)
    for pos, q in enumerate(support):
        bit = (local >> (s - 1 - pos)) & 1
        mask = 1 << (n - 1 - q)
        out = (out & ~mask) | (bit << (n - 1 - q))
    return out


@dataclass(frozen=True)
class ChainGate:
    support: tuple
    H: np.ndarray = field(repr=False)
    theta: float = 0.0

    def __post_init__(self):
        support = tuple(int(q) for q in self.support)
        object.__setattr__(self, "support", support)
        H = np.array(self.H, dtype=np.float64)
        H.setflags(write=False)
        object.__setattr__(self, "H", H)
        d = 1 << len(support)
        if len(support) not in (1, 2) or len(set(support)) != len(support):
            raise ValueError("local generators act on one or two distinct bits")
        if H.shape != (d, d):
            raise ValueError(f"generator on {len(support)} bit(s) must be {d}x{d}")
        if np.max(np.abs(H.sum(axis=0))) > TOL:
            raise ValueError("generator columns must sum to zero")
        off = H - np.diag(np.diag(H))
        if off.min() < -TOL:
            raise ValueError("generator off-diagonal entries must be non-negative")
        if self.theta < 0:
            raise ValueError("negative times are not supported (the map may not be stochastic)")

    @property
    def U(self) -> np.ndarray:
        """Local transition matrix ``exp(theta H)`` (columns are conditional distributions)."""
        return _expm_local(self.H.tobytes(), self.H.shape[0], float(self.theta))

    @property
    def HU(self) -> np.ndarray:
        return self.H @ self.U


_EXPM_CACHE: dict = {}


def _expm_local(key: bytes, dim: int, theta: float) -> np.ndarray:
    ck = (key, theta)
    if ck not in _EXPM_CACHE:
        H = np.frombuffer(key, dtype=np.float64).reshape(dim, dim)
        U = scipy.linalg.expm(theta * H)
        U = np.clip(U, 0.0, None)
        U /= U.sum(axis=0, keepdims=True)
        U.setflags(write=False)
        if len(_EXPM_CACHE) > 65536:
            _EXPM_CACHE.clear()
        _EXPM_CACHE[ck] = U
    return _EXPM_CACHE[ck]


def _apply_local(vec: np.ndarray, n: int, support: tuple, mat: np.ndarray, transpose: bool = False) -> np.ndarray:
    """Apply a local matrix on ``support`` to a length ``2**n`` vector."""
    t = vec.reshape((2,) * n)
    t = np.moveaxis(t, support, range(len(support)))
    shape = t.shape
    m = mat.T if transpose else mat
    t = (m @ t.reshape(mat.shape[0], -1)).reshape(shape)
    return np.moveaxis(t, range(len(support)), support).reshape(-1)


@dataclass(frozen=True)
class StochasticChain:
    n_bits: int
    gates: tuple
    initial: np.ndarray = field(repr=False)
    observable: np.ndarray = field(repr=False)

    def __post_init__(self):
        n = self.n_bits
        if not 1 <= n <= MAX_BITS:
            raise ValueError(f"chains are limited to 1..{MAX_BITS} bits")
        object.__setattr__(self, "gates", tuple(self.gates))
        for g in self.gates:
            if max(g.support) >= n:
                raise ValueError("gate support outside the chain")
        init = np.asarray(self.initial, dtype=np.float64)
        if init.shape == (n,) and n != 1 << n:
            init = _product_distribution(init)
        if init.shape != (1 << n,) or init.min() < -TOL or abs(init.sum() - 1) > 1e-9:
            raise ValueError("initial distribution must be a probability vector over 2^n configurations")
        obs = np.asarray(self.observable, dtype=np.float64)
        if obs.shape != (1 << n,) or np.max(np.abs(obs)) > 1 + TOL:
            raise ValueError("observable must give one value in [-1, 1] per configuration")
        for arr, name in ((init, "initial"), (obs, "observable")):
            arr.setflags(write=False)
            object.__setattr__(self, name, arr)

    @property
    def N(self) -> int:
        return len(self.gates)

    @property
    def theta(self) -> np.ndarray:
        return np.array([g.theta for g in self.gates])

    def with_theta(self, theta) -> "StochasticChain":
        gates = tuple(ChainGate(g.support, g.H, float(t)) for g, t in zip(self.gates, theta))
        return StochasticChain(self.n_bits, gates, self.initial, self.observable)


def _product_distribution(p_one: np.ndarray) -> np.ndarray:
    out = np.ones(1)
    for p in p_one:
        if not 0 <= p <= 1:
            raise ValueError("per-bit probabilities must lie in [0, 1]")
        out = np.kron(out, [1 - p, p])
    return out


@dataclass(frozen=True)
class SamplePath:
    """Configurations ``i_0`` (initial sample) through ``i_N`` and the path log-probability."""

    configs: tuple
    log_probability: float


def markov_evaluate(c: StochasticChain, ledger: CopyLedger | None = None) -> float:
    """Exact ``sum_s O(s) (U_N ... U_1 psi_0)(s)``."""
    p = c.initial
    for g in c.gates:
        p = _apply_local(p, c.n_bits, g.support, g.U)
    if ledger is not None:
        ledger.charge("forward", gate_applications=c.N)
    return float(np.dot(c.observable, p))


def markov_exact_gradient(c: StochasticChain, ledger: CopyLedger | None = None) -> np.ndarray:
    """Adjoint sweep: ``d f / d theta_i = r_i . H_i p_i`` with ``p_i`` cached forward and ``r_i`` pulled back.

    A local-map application is one unit of time; the sweep costs ``3N - 1``
    units against ``N`` for one evaluation.
    """
    n = c.n_bits
    dists = [c.initial]
    for g in c.gates:
        dists.append(_apply_local(dists[-1], n, g.support, g.U))
    r = c.observable.copy()
    grad = np.zeros(c.N)
    for i in range(c.N - 1, -1, -1):
        g = c.gates[i]
        grad[i] = float(np.dot(r, _apply_local(dists[i + 1], n, g.support, g.H)))
        if i > 0:
            r = _apply_local(r, n, g.support, g.U, transpose=True)
    if ledger is not None:
        ledger.charge("forward", gate_applications=c.N)
        ledger.charge("backward", gate_applications=max(2 * c.N - 1, 0))
    return grad


def markov_finite_difference(c: StochasticChain, h: float = 1e-5) -> np.ndarray:
    """Central differences (the caller keeps every ``theta_i >= h``)."""
    theta = c.theta
    grad = np.zeros(c.N)
    for i in range(c.N):
        step = np.zeros(c.N)
        step[i] = h
        grad[i] = (markov_evaluate(c.with_theta(theta + step)) - markov_evaluate(c.with_theta(theta - step))) / (2 * h)
    return grad


def sample_paths(c: StochasticChain, num_paths: int, rng) -> tuple[np.ndarray, np.ndarray]:
    """``num_paths`` trajectories as an ``(num_paths, N + 1)`` array plus their log-probabilities."""
    gen = as_generator(rng)
    n = c.n_bits
    configs = np.empty((num_paths, c.N + 1), dtype=np.int64)
    cur = gen.choice(1 << n, size=num_paths, p=c.initial)
    logp = np.log(c.initial[cur])
    configs[:, 0] = cur
    for i, g in enumerate(c.gates):
        local = _local_index(cur, n, g.support)
        cdf = np.cumsum(g.U, axis=0)
        u = gen.random(num_paths)
        new_local = np.minimum((u[:, None] > cdf[:, local].T).sum(axis=1), g.U.shape[0] - 1)
        logp = logp + np.log(g.U[new_local, local])
        cur = _set_local(cur, n, g.support, new_local)
        configs[:, i + 1] = cur
    return configs, logp


def sample_path(c: StochasticChain, rng) -> SamplePath:
    configs, logp = sample_paths(c, 1, rng)
    return SamplePath(tuple(int(v) for v in configs[0]), float(logp[0]))


def enumerate_paths(c: StochasticChain) -> tuple[np.ndarray, np.ndarray]:
    """Every trajectory with non-zero probability and its probability."""
    n = c.n_bits
    start = np.nonzero(c.initial > 0)[0]
    configs = start[:, None]
    probs = c.initial[start]
    for g in c.gates:
        cur = configs[:, -1]
        local = _local_index(cur, n, g.support)
        d = g.U.shape[0]
        rows, nxt, pr = [], [], []
        for new in range(d):
            w = g.U[new, local]
            keep = w > 0
            rows.append(np.nonzero(keep)[0])
            nxt.append(_set_local(cur[keep], n, g.support, np.full(keep.sum(), new)))
            pr.append(probs[keep] * w[keep])
        rows = np.concatenate(rows)
        configs = np.column_stack([configs[rows], np.concatenate(nxt)])
        probs = np.concatenate(pr)
    return configs, probs


def _weights_table(g: ChainGate) -> np.ndarray:
    U = g.U
    with np.errstate(divide="ignore", invalid="ignore"):
        return np.where(U > 0, g.HU / np.where(U > 0, U, 1.0), 0.0)


def path_gradient_samples(c: StochasticChain, configs: np.ndarray) -> np.ndarray:
    """Reweighted samples ``(H_j U_j)[i_j, i_{j-1}] / U_j[i_j, i_{j-1}] * O(i_N)`` for all paths and gates."""
    n = c.n_bits
    configs = np.atleast_2d(configs)
    final = c.observable[configs[:, -1]]
    out = np.empty((configs.shape[0], c.N))
    for j, g in enumerate(c.gates):
        before = _local_index(configs[:, j], n, g.support)
        after = _local_index(configs[:, j + 1], n, g.support)
        if np.any(g.U[after, before] <= 0):
            raise ValueError(f"path uses a zero-probability transition at gate {j}")
        out[:, j] = _weights_table(g)[after, before] * final
    return out


def path_gradient_sample(c: StochasticChain, path: SamplePath, j: int) -> float:
    """Gradient sample for gate ``j`` (0-based) from one trajectory."""
    if not 0 <= j < c.N:
        raise IndexError("gate index out of range")
    cfg = np.asarray(path.configs, dtype=np.int64)
    if cfg.size != c.N + 1:
        raise ValueError("path length does not match the chain")
    g = c.gates[j]
    keep = ~sum(1 << (c.n_bits - 1 - q) for q in g.support)
    if (cfg[j] & keep) != (cfg[j + 1] & keep):
        raise ValueError("path changes bits outside the gate support")
    return float(path_gradient_samples(c, cfg[None, :])[0, j])


def markov_backprop_estimate(c: StochasticChain, num_paths: int, rng,
                             ledger: CopyLedger | None = None) -> tuple[np.ndarray, np.ndarray]:
    """Mean and standard error of the path-reweighted gradient; one trajectory serves all gates."""
    if num_paths < 1:
        raise ValueError("need at least one path")
    configs, _ = sample_paths(c, num_paths, rng)
    samples = path_gradient_samples(c, configs)
    if ledger is not None:
        ledger.charge("paths", copies_consumed=num_paths, circuit_executions=num_paths,
                      gate_applications=num_paths * c.N)
    mean = samples.mean(axis=0)
    if num_paths == 1:
        return mean, np.full(c.N, np.inf)
    return mean, samples.std(axis=0, ddof=1) / np.sqrt(num_paths)


# --------------------------------------------------------------------------- constructors and JSON


def random_generator(support_size: int, rng) -> np.ndarray:
    """Random infinitesimal-stochastic matrix with largest exit rate 1."""
    gen = as_generator(rng)
    d = 1 << support_size
    H = gen.random((d, d))
    np.fill_diagonal(H, 0.0)
    H -= np.diag(H.sum(axis=0))
    return H / np.max(np.abs(np.diag(H)))


def random_chain(n_bits: int, N: int, rng, two_bit_fraction: float = 0.5, theta_range=(0.1, 1.5),
                 observable: str | np.ndarray = "random", gates: Sequence[ChainGate] = ()) -> StochasticChain:
    """Random chain; ``gates`` are used as the first gates before random ones are appended."""
    gen = as_generator(rng)
    gates = list(gates)
    while len(gates) < N:
        two = n_bits >= 2 and gen.random() < two_bit_fraction
        support = tuple(int(q) for q in gen.choice(n_bits, size=2 if two else 1, replace=False))
        gates.append(ChainGate(support, random_generator(len(support), gen), float(gen.uniform(*theta_range))))
    init = gen.random(1 << n_bits)
    init /= init.sum()
    if isinstance(observable, str):
        configs = np.arange(1 << n_bits)
        if observable == "random":
            obs = gen.uniform(-1, 1, size=1 << n_bits)
        elif observable == "parity":
            obs = 1.0 - 2.0 * (np.bitwise_count(configs) % 2)
        elif observable == "sign":
            obs = gen.choice([-1.0, 1.0], size=1 << n_bits)
        else:
            raise ValueError(f"unknown observable {observable!r}")
    else:
        obs = observable
    return StochasticChain(n_bits, gates[:N], init, obs)


def _named_observable(name: str, n: int) -> np.ndarray:
    configs = np.arange(1 << n)
    if name == "parity":
        return 1.0 - 2.0 * (np.bitwise_count(configs) % 2)
    if name.startswith("z"):
        q = int(name[1:])
        return 1.0 - 2.0 * ((configs >> (n - 1 - q)) & 1)
    raise ValueError(f"unknown observable {name!r}")


def chain_from_json(doc: dict) -> StochasticChain:
    import jsonschema

    from .models import load_schema

    jsonschema.validate(doc, load_schema("chain"))
    n = int(doc["n_bits"])
    gates = [ChainGate(tuple(g["support"]), np.array(g["generator"]), float(g["theta"])) for g in doc["gates"]]
    init = doc.get("initial")
    init = np.eye(1 << n)[0] if init is None else np.asarray(init, dtype=np.float64)
    obs = doc["observable"]
    obs = _named_observable(obs, n) if isinstance(obs, str) else np.asarray(obs, dtype=np.float64)
    return StochasticChain(n, gates, init, obs)


def chain_to_json(c: StochasticChain) -> dict:
    return {
        "n_bits": c.n_bits,
        "gates": [{"support": list(g.support), "generator": g.H.tolist(), "theta": g.theta} for g in c.gates],
        "initial": c.initial.tolist(),
        "observable": c.observable.tolist(),
    }


def load_chain(path) -> StochasticChain:
    return chain_from_json(json.loads(Path(path).read_text()))


# --------------------------------------------------------------------------- reverse-mode chain


@dataclass(frozen=True)
class ElementaryMap:
    """One stage ``z -> f(z)`` with its Jacobian evaluator ``z -> df/dz`` (shape out x in)."""

    f: Callable
    jacobian: Callable


@dataclass
class ChainCost:
    forward_time: int = 0
    forward_memory: int = 0
    gradient_time: int = 0
    gradient_memory: int = 0

    @property
    def time_ratio(self) -> float:
        return self.gradient_time / self.forward_time if self.forward_time else float("nan")

    @property
    def memory_ratio(self) -> float:
        return self.gradient_memory / self.forward_memory if self.forward_memory else float("nan")


def reverse_mode_chain(funcs: Sequence[ElementaryMap], x, cotangent=None) -> tuple[float, np.ndarray, ChainCost]:
    """Value and gradient of ``<cotangent, f_M(...f_1(x))>`` by one forward and one backward pass.

    ``cotangent`` defaults to all ones, which is the plain gradient for a
    scalar output. Each stage evaluation or vector-Jacobian product costs one
    time unit; memory counts stored vector entries.
    """
    z = np.atleast_1d(np.asarray(x, dtype=np.float64))
    cost = ChainCost()
    stored = [z]
    for fn in funcs:
        z = np.atleast_1d(np.asarray(fn.f(stored[-1]), dtype=np.float64))
        if z.ndim != 1:
            raise ValueError("elementary maps must return vectors")
        stored.append(z)
        cost.forward_time += 1
    cost.forward_memory = sum(v.size for v in stored)
    lam = np.ones_like(z) if cotangent is None else np.atleast_1d(np.asarray(cotangent, dtype=np.float64))
    if lam.shape != z.shape:
        raise ValueError("cotangent does not match the output dimension")
    value = float(np.dot(lam, z))
    adjoint_memory = lam.size
    for i in range(len(funcs) - 1, -1, -1):
        jac = np.atleast_2d(np.asarray(funcs[i].jacobian(stored[i]), dtype=np.float64))
        if jac.shape != (stored[i + 1].size, stored[i].size):
            raise ValueError(f"stage {i} Jacobian has shape {jac.shape}, expected "
                             f"{(stored[i + 1].size, stored[i].size)}")
        lam = lam @ jac
        adjoint_memory += lam.size
    cost.gradient_time = 2 * cost.forward_time
    cost.gradient_memory = cost.forward_memory + adjoint_memory
    return value, lam, cost
