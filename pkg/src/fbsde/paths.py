"""Reproducible Brownian increments and the forward Euler pass.

Increments are produced by the counter-based Philox generator keyed on the
seed: entry (path, step, component) is word j mod 4 of the Philox block
j div 4, where j is the C-order flat index.  Uniform words are mapped
through the inverse normal CDF, so any single entry can be regenerated
independently of every other one (see `increment_at`) and the full tensor
is bit-identical across runs and across any partitioning of the work.

The forward pass advances all paths through

    X_{i+1} = X_i + b(t_i, X_i, y_i) h + sigma(t_i, X_i, y_i) dW_{i+1},
    y_i = u_prev(i, X_i),

given the previous iterate's value function.  A non-finite state aborts
with the offending (path, step); this is the practical detector for a
non-Lipschitz u_prev.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass

import numpy as np
from numpy.random import Philox
from scipy.special import ndtri

from .model import FbsdeProblem, Grid

__all__ = [
    "IncrementSet",
    "PathEnsemble",
    "CapacityError",
    "ForwardBlowUpError",
    "generate_increments",
    "increment_at",
    "forward_paths",
    "write_ensemble",
    "read_ensemble",
]

DEFAULT_MAX_ENTRIES = 2 ** 27  # ~1 GiB of float64
_MAGIC = b"FBSDEPTH"
_FILE_VERSION = 1
_HEADER = struct.Struct("<8sIIIIIdQ")


class CapacityError(ValueError):
    """Requested increment tensor exceeds the configured memory budget."""


class ForwardBlowUpError(RuntimeError):
    """A forward state became non-finite."""

    def __init__(self, path: int, step: int, iteration: int | None = None):
        self.path = path
        self.step = step
        self.iteration = iteration
        at = f" in iteration {iteration}" if iteration is not None else ""
        super().__init__(
            f"non-finite forward state at path {path}, step {step}{at}; "
            "coefficients or the previous value function blew up")


@dataclass(frozen=True, eq=False)
class IncrementSet:
    """Brownian increments, shape (num_paths, n, dim_w), variance h each."""

    data: np.ndarray
    h: float
    seed: int

    @property
    def num_paths(self) -> int:
        return self.data.shape[0]

    @property
    def n(self) -> int:
        return self.data.shape[1]

    @property
    def dim_w(self) -> int:
        return self.data.shape[2]


@dataclass(frozen=True, eq=False)
class PathEnsemble:
    """Forward Euler trajectories, shape (num_paths, n+1, dim_x)."""

    states: np.ndarray
    increments: IncrementSet
    iteration_index: int

    @property
    def num_paths(self) -> int:
        return self.states.shape[0]

    @property
    def n(self) -> int:
        return self.states.shape[1] - 1


def _raw_to_gaussian(raw: np.ndarray, h: float) -> np.ndarray:
    # 53-bit uniform strictly inside (0, 1), then inverse CDF: monotone,
    # rejection-free, reproducible.
    u = ((raw >> np.uint64(11)).astype(np.float64) + 0.5) * 2.0 ** -53
    return ndtri(u) * np.sqrt(h)


def generate_increments(n: int, dim_w: int, num_paths: int, h: float,
                        seed: int,
                        max_entries: int = DEFAULT_MAX_ENTRIES) -> IncrementSet:
    """Fill the (num_paths, n, dim_w) increment tensor from Philox(seed)."""
    if n < 1 or dim_w < 1 or num_paths < 1:
        raise ValueError("n, dim_w and num_paths must be >= 1")
    if not (h > 0):
        raise ValueError("h must be positive")
    total = num_paths * n * dim_w
    if total > max_entries:
        raise CapacityError(
            f"increment tensor needs {total} entries "
            f"(num_paths={num_paths}, n={n}, dim_w={dim_w}), "
            f"budget is {max_entries}")
    raw = Philox(key=seed).random_raw(total)
    data = _raw_to_gaussian(raw, h).reshape(num_paths, n, dim_w)
    data.setflags(write=False)
    return IncrementSet(data=data, h=float(h), seed=int(seed))


def increment_at(seed: int, path: int, step: int, component: int,
                 n: int, dim_w: int, h: float) -> float:
    """Recompute one increment entry directly from its counter position."""
    j = (path * n + step) * dim_w + component
    gen = Philox(key=seed)
    gen.advance(j // 4)  # one Philox block = 4 raw words
    raw = gen.random_raw(j % 4 + 1)[-1:]
    return float(_raw_to_gaussian(np.asarray(raw, dtype=np.uint64), h)[0])


def forward_paths(problem: FbsdeProblem, grid: Grid, u_prev,
                  increments: IncrementSet,
                  iteration_index: int = 0) -> PathEnsemble:
    """Run the Euler forward pass under the value function `u_prev`.

    `u_prev(i, x)` must accept x of shape (num_paths, dim_x) and return the
    scalar backward values (num_paths,) for every i = 0..n-1; it must be
    re-entrant.  Output states are written once and frozen.
    """
    if increments.n != grid.n:
        raise ValueError(f"increments have n={increments.n}, grid has n={grid.n}")
    if increments.dim_w != problem.dim_w:
        raise ValueError("increments dim_w does not match the problem")
    num_paths = increments.num_paths
    h = grid.h
    states = np.empty((num_paths, grid.n + 1, problem.dim_x))
    states[:, 0, :] = problem.x0
    x = np.broadcast_to(problem.x0, (num_paths, problem.dim_x)).copy()
    times = grid.times
    for i in range(grid.n):
        y = np.asarray(u_prev(i, x), dtype=float)
        b = np.asarray(problem.drift(times[i], x, y), dtype=float)
        s = np.asarray(problem.diffusion(times[i], x, y), dtype=float)
        x = x + b * h + np.einsum("pdw,pw->pd", s, increments.data[:, i, :])
        if not np.all(np.isfinite(x)):
            bad = np.argwhere(~np.isfinite(x))[0]
            raise ForwardBlowUpError(int(bad[0]), i + 1, iteration_index)
        states[:, i + 1, :] = x
    states.setflags(write=False)
    return PathEnsemble(states=states, increments=increments,
                        iteration_index=iteration_index)


def write_ensemble(ensemble: PathEnsemble, path) -> None:
    """Dump states to a little-endian binary file.

    Layout: magic "FBSDEPTH", version u32, n u32, num_paths u32, dim_x u32,
    dim_w u32, h f64, seed u64, then the states as f64 in (path-major,
    step, component) order.
    """
    states = ensemble.states
    header = _HEADER.pack(
        _MAGIC, _FILE_VERSION, ensemble.n, ensemble.num_paths,
        states.shape[2], ensemble.increments.dim_w,
        ensemble.increments.h, ensemble.increments.seed)
    with open(path, "wb") as fh:
        fh.write(header)
        fh.write(np.ascontiguousarray(states, dtype="<f8").tobytes())


def read_ensemble(path) -> tuple[dict, np.ndarray]:
    """Read a dumped ensemble; returns (header fields, states array)."""
    with open(path, "rb") as fh:
        head = fh.read(_HEADER.size)
        magic, version, n, num_paths, dim_x, dim_w, h, seed = _HEADER.unpack(head)
        if magic != _MAGIC:
            raise ValueError(f"{path}: not an ensemble file (bad magic {magic!r})")
        if version != _FILE_VERSION:
            raise ValueError(f"{path}: unsupported version {version}")
        data = np.frombuffer(fh.read(), dtype="<f8")
    states = data.reshape(num_paths, n + 1, dim_x)
    meta = {"version": version, "n": n, "num_paths": num_paths,
            "dim_x": dim_x, "dim_w": dim_w, "h": h, "seed": seed}
    return meta, states
