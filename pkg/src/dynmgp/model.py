"""Core data model: output series, dynamic kernel parameters, prior config.

All kernel parameters are stored unconstrained; positive values are obtained
through the soft-plus map.  Types are treated as immutable after construction
(training code builds updated copies rather than mutating in place).
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

__all__ = [
    "OutputSeries",
    "Dataset",
    "DynamicParams",
    "HardSlab",
    "SoftSlab",
    "SpikeSlabConfig",
    "GammaPosterior",
    "softplus",
    "softplus_grad",
    "softplus_inv",
]


def softplus(u):
    """Overflow-safe log(1 + exp(u)), elementwise."""
    u = np.asarray(u, dtype=float)
    out = np.where(u > 30.0, u, np.log1p(np.exp(np.minimum(u, 30.0))))
    out = np.where(u < -30.0, np.exp(np.clip(u, -30.0, 0.0)), out)
    if out.ndim == 0:
        return float(out)
    return out


def softplus_grad(u):
    """d softplus / du = sigmoid(u), elementwise."""
    u = np.asarray(u, dtype=float)
    out = np.where(u >= 0, 1.0 / (1.0 + np.exp(-np.abs(u))),
                   np.exp(np.minimum(u, 0.0)) / (1.0 + np.exp(np.minimum(u, 0.0))))
    if out.ndim == 0:
        return float(out)
    return out


def softplus_inv(v):
    """Inverse of softplus on positive values: log(exp(v) - 1)."""
    v = np.asarray(v, dtype=float)
    out = np.where(v > 30.0, v, np.log(np.expm1(np.maximum(v, 1e-300))))
    if out.ndim == 0:
        return float(out)
    return out


@dataclass(frozen=True)
class OutputSeries:
    """One output's time-indexed data.

    times : strictly increasing integer stamps, shape (n,)
    inputs : (n, d) input matrix
    values : (n,) observations
    """

    id: int
    times: np.ndarray
    inputs: np.ndarray
    values: np.ndarray

    def __post_init__(self):
        times = np.asarray(self.times, dtype=int)
        inputs = np.atleast_2d(np.asarray(self.inputs, dtype=float))
        if inputs.shape[0] != times.shape[0] and inputs.shape[1] == times.shape[0]:
            inputs = inputs.T
        values = np.asarray(self.values, dtype=float).ravel()
        if not np.all(np.diff(times) > 0):
            raise ValueError(f"output {self.id}: time stamps must be strictly increasing")
        if not (len(times) == inputs.shape[0] == len(values)):
            raise ValueError(
                f"output {self.id}: got {len(times)} stamps, "
                f"{inputs.shape[0]} input rows, {len(values)} observations"
            )
        object.__setattr__(self, "times", times)
        object.__setattr__(self, "inputs", inputs)
        object.__setattr__(self, "values", values)

    @property
    def n(self) -> int:
        return len(self.times)

    @property
    def d(self) -> int:
        return self.inputs.shape[1]


@dataclass(frozen=True)
class Dataset:
    """Sources plus one target output, all sharing input dimension d."""

    sources: list
    target: OutputSeries

    def __post_init__(self):
        # zero sources is allowed: the model degenerates to a single-output GP
        d = self.target.d
        for s in self.sources:
            if s.d != d:
                raise ValueError("all outputs must share the same input dimension")

    @property
    def n_sources(self) -> int:
        return len(self.sources)

    @property
    def m(self) -> int:
        """Total number of outputs (sources + target)."""
        return len(self.sources) + 1

    @property
    def d(self) -> int:
        return self.target.d

    @property
    def total_points(self) -> int:
        return sum(s.n for s in self.sources) + self.target.n


@dataclass(frozen=True)
class HardSlab:
    """Laplace prior on successive differences; favors piecewise-constant paths."""

    nu1: float

    def __post_init__(self):
        if self.nu1 <= 0:
            raise ValueError("nu1 must be positive")


@dataclass(frozen=True)
class SoftSlab:
    """Gaussian AR(1) transition prior; favors smooth drift."""

    nu1: float
    rho: float

    def __post_init__(self):
        if self.nu1 <= 0:
            raise ValueError("nu1 must be positive")
        if not 0.0 < self.rho < 1.0:
            raise ValueError("rho must be in (0, 1)")


@dataclass(frozen=True)
class SpikeSlabConfig:
    """Spike scale, slab prior, and prior slab weight eta."""

    nu0: float
    slab: HardSlab | SoftSlab
    eta: float = 0.5

    def __post_init__(self):
        if self.nu0 <= 0:
            raise ValueError("nu0 must be positive")
        if not 0.0 < self.eta <= 1.0:
            raise ValueError("eta must be in (0, 1]")


@dataclass(frozen=True)
class GammaPosterior:
    """Posterior slab membership E[gamma_{i,t}], rows over outputs i in I,
    columns over the target's time stamps from the second one on."""

    values: np.ndarray

    def __post_init__(self):
        values = np.asarray(self.values, dtype=float)
        if np.any(values < 0) or np.any(values > 1):
            raise ValueError("slab posteriors must lie in [0, 1]")
        object.__setattr__(self, "values", values)


@dataclass
class DynamicParams:
    """Unconstrained parameter set for the dynamic model.

    source_amp_u : list of (n_i,) arrays, one per source
    source_ls_u  : list of (n_i, d) arrays
    target_amp_u : (m, n_m) array; row i < m-1 is source i's channel into the
                   target, row m-1 is the target's own channel
    target_ls_u  : (m, n_m, d) array
    source_noise_u : (m-1,) array
    target_noise_u : float
    """

    source_amp_u: list
    source_ls_u: list
    target_amp_u: np.ndarray
    target_ls_u: np.ndarray
    source_noise_u: np.ndarray
    target_noise_u: float

    # -- constrained views ------------------------------------------------
    def source_amp(self, i):
        return softplus(self.source_amp_u[i])

    def source_ls(self, i):
        return softplus(self.source_ls_u[i])

    def target_amp(self):
        return softplus(self.target_amp_u)

    def target_ls(self):
        return softplus(self.target_ls_u)

    def source_noise_var(self):
        return softplus(self.source_noise_u) ** 2

    def target_noise_var(self):
        return float(softplus(self.target_noise_u)) ** 2

    def copy(self) -> "DynamicParams":
        return DynamicParams(
            source_amp_u=[a.copy() for a in self.source_amp_u],
            source_ls_u=[l.copy() for l in self.source_ls_u],
            target_amp_u=self.target_amp_u.copy(),
            target_ls_u=self.target_ls_u.copy(),
            source_noise_u=self.source_noise_u.copy(),
            target_noise_u=float(self.target_noise_u),
        )

    # -- flat-vector packing for the optimizer ----------------------------
    def pack(self) -> np.ndarray:
        parts = [a.ravel() for a in self.source_amp_u]
        parts += [l.ravel() for l in self.source_ls_u]
        parts += [self.target_amp_u.ravel(), self.target_ls_u.ravel(),
                  self.source_noise_u.ravel(), np.array([self.target_noise_u])]
        return np.concatenate(parts)

    def unpack(self, vec: np.ndarray) -> "DynamicParams":
        """Return a new DynamicParams with this one's shapes and vec's values."""
        out = self.copy()
        k = 0
        for i, a in enumerate(out.source_amp_u):
            out.source_amp_u[i] = vec[k:k + a.size].reshape(a.shape).copy()
            k += a.size
        for i, l in enumerate(out.source_ls_u):
            out.source_ls_u[i] = vec[k:k + l.size].reshape(l.shape).copy()
            k += l.size
        for name in ("target_amp_u", "target_ls_u", "source_noise_u"):
            arr = getattr(out, name)
            setattr(out, name, vec[k:k + arr.size].reshape(arr.shape).copy())
            k += arr.size
        out.target_noise_u = float(vec[k])
        k += 1
        if k != vec.size:
            raise ValueError(f"parameter vector has {vec.size} entries, expected {k}")
        return out

    @staticmethod
    def init_random(dataset: Dataset, rng: np.random.Generator) -> "DynamicParams":
        """Random starting point: target amplitudes pre-softplus uniform on
        [0.1, 0.5], length-scales near 1, noise near 0.1 (constrained).

        The target's own channel starts small (0.1 constrained): if it starts
        on par with the cross channels it tends to absorb the target's
        structure in the first optimization steps, after which the sparsity
        prior locks the cross amplitudes near zero and the model degenerates
        to an independent GP.  Starting it low gives the source couplings
        explanatory priority; the own channel still grows freely on whatever
        the sources cannot explain.
        """
        d = dataset.d
        ls0 = softplus_inv(1.0)
        noise0 = softplus_inv(0.1)
        n_m = dataset.target.n
        m = dataset.m
        target_amp_u = rng.uniform(0.1, 0.5, size=(m, n_m))
        target_amp_u[-1, :] = softplus_inv(0.1)
        return DynamicParams(
            source_amp_u=[rng.uniform(0.1, 0.5, size=s.n) for s in dataset.sources],
            source_ls_u=[np.full((s.n, d), ls0) for s in dataset.sources],
            target_amp_u=target_amp_u,
            target_ls_u=np.full((m, n_m, d), ls0),
            source_noise_u=np.full(m - 1, noise0),
            target_noise_u=noise0,
        )
