"""Centered Gaussian sample models and their Cameron-Martin geometry.

Four model families share one interface:

* ``Scalar(sigma)``          - a single N(0, sigma^2) draw;
* ``FiniteSpectrum(lambdas)`` - independent coordinates N(0, lambda_k);
* ``WienerPath(n, d, horizon)`` - Brownian motion sampled exactly on a uniform
  grid of n steps (cumulative sqrt(dt) increments);
* ``BrownianBridge(n)``      - Brownian bridge on [0, 1] built by conditioning
  the endpoint (W_t - t W_1, exact for the grid marginals).

Each model can draw batches, compute the Cameron-Martin (RKHS) norm of a
shift defined on its grid, and evaluate the shift's linear functional on a
sample, which together give the density ratio of the shifted measure
(``cm_log_weight``): log d(mu shifted by h)/d(mu) at y equals z_h(y) - |h|^2/2.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError, ShapeError
from .streams import RandomStream


@dataclass(frozen=True)
class Path:
    """A single draw on a uniform grid. Scalar and spectral draws are
    degenerate paths (dt = 0) holding one node or one coordinate vector."""

    values: np.ndarray
    dt: float

    @property
    def n_nodes(self) -> int:
        return self.values.shape[0]

    @property
    def dim(self) -> int:
        return 1 if self.values.ndim == 1 else self.values.shape[-1]

    @property
    def times(self) -> np.ndarray:
        return self.dt * np.arange(self.n_nodes)


@dataclass(frozen=True)
class CmShift:
    """A candidate Cameron-Martin shift given by its values on the model grid."""

    values: np.ndarray


class GaussianModel:
    """Shared contract; concrete models fill in the sampling and geometry."""

    name: str = "gaussian"

    # -- sampling ---------------------------------------------------------
    def sample_values(self, rng: np.random.Generator, count: int) -> np.ndarray:
        raise NotImplementedError

    def sample(self, stream: RandomStream, count: int) -> list[Path]:
        vals = self.sample_values(stream.generator(), count)
        return [Path(v, self.dt) for v in vals]

    # -- geometry ---------------------------------------------------------
    @property
    def dt(self) -> float:
        return 0.0

    @property
    def dim(self) -> int:
        return 1

    def grid(self) -> np.ndarray:
        raise NotImplementedError

    def rkhs_norm_sq(self, h: np.ndarray) -> float:
        """Squared Cameron-Martin norm; +inf means 'not in the shift space'."""
        raise NotImplementedError

    def paley_wiener(self, h: np.ndarray, samples: np.ndarray) -> np.ndarray:
        """z_h evaluated on a batch of samples; Var z_h = |h|^2."""
        raise NotImplementedError

    def _as_shift(self, shift) -> np.ndarray:
        h = shift.values if isinstance(shift, CmShift) else np.asarray(shift, dtype=float)
        return np.atleast_1d(np.asarray(h, dtype=float))


@dataclass(frozen=True)
class Scalar(GaussianModel):
    sigma: float = 1.0
    name: str = field(default="scalar", init=False)

    def __post_init__(self):
        if not self.sigma > 0:
            raise DomainError(f"sigma must be positive, got {self.sigma}")

    def sample_values(self, rng, count):
        return self.sigma * rng.standard_normal(count)

    def sample(self, stream, count):
        vals = self.sample_values(stream.generator(), count)
        return [Path(np.array([v]), 0.0) for v in vals]

    def grid(self):
        return np.zeros(1)

    def _scalar_shift(self, h) -> float:
        h = self._as_shift(h)
        if h.size != 1:
            raise ShapeError(f"scalar shift must hold one value, got shape {h.shape}")
        return float(h[0])

    def rkhs_norm_sq(self, h):
        c = self._scalar_shift(h)
        return (c / self.sigma) ** 2

    def paley_wiener(self, h, samples):
        c = self._scalar_shift(h)
        y = np.asarray(samples, dtype=float)
        return c * y / self.sigma**2


@dataclass(frozen=True)
class FiniteSpectrum(GaussianModel):
    lambdas: tuple[float, ...] = (1.0,)
    name: str = field(default="finite", init=False)

    def __post_init__(self):
        lam = tuple(float(v) for v in self.lambdas)
        if len(lam) == 0 or any(v <= 0 for v in lam):
            raise DomainError("lambdas must be a non-empty tuple of positive variances")
        object.__setattr__(self, "lambdas", lam)

    @property
    def k(self) -> int:
        return len(self.lambdas)

    def sample_values(self, rng, count):
        z = rng.standard_normal((count, self.k))
        return z * np.sqrt(np.asarray(self.lambdas))

    def grid(self):
        return np.arange(self.k, dtype=float)

    def _aligned(self, h) -> np.ndarray:
        h = self._as_shift(h)
        if h.ndim != 1:
            raise ShapeError(f"spectral shift must be a vector, got shape {h.shape}")
        return h

    def rkhs_norm_sq(self, h):
        h = self._aligned(h)
        if h.size > self.k:
            # a zero-padded vector is still in the space; any energy beyond
            # the spectrum is not representable
            if np.any(h[self.k :] != 0):
                return math.inf
            h = h[: self.k]
        lam = np.asarray(self.lambdas[: h.size])
        return float(np.sum(h * h / lam))

    def paley_wiener(self, h, samples):
        h = self._aligned(h)
        if h.size > self.k:
            if np.any(h[self.k :] != 0):
                raise DomainError("shift is not in the Cameron-Martin space of this spectrum")
            h = h[: self.k]
        y = np.asarray(samples, dtype=float)
        lam = np.asarray(self.lambdas[: h.size])
        return y[..., : h.size] @ (h / lam)


class _GridModel(GaussianModel):
    """Common machinery for path models on a uniform grid including t=0."""

    n_steps: int
    horizon: float

    @property
    def dt(self) -> float:
        return self.horizon / self.n_steps

    def grid(self):
        return self.dt * np.arange(self.n_steps + 1)

    def _path_shift(self, h, *, pin_end: bool = False) -> np.ndarray:
        h = self._as_shift(h)
        want = self.n_steps + 1
        if h.shape[0] != want:
            raise ShapeError(f"shift has {h.shape[0]} nodes, model grid has {want}")
        if not np.all(np.abs(np.atleast_1d(h[0])) == 0):
            raise DomainError("path shifts must start at 0")
        if pin_end and not np.all(np.abs(np.atleast_1d(h[-1])) == 0):
            raise DomainError("bridge shifts must end at 0")
        return h

    def _energy(self, h: np.ndarray) -> float:
        inc = np.diff(h, axis=0)
        return float(np.sum(inc * inc) / self.dt)

    def _increment_functional(self, h: np.ndarray, samples: np.ndarray) -> np.ndarray:
        dh = np.diff(h, axis=0)
        # the node axis is last for scalar-valued paths and next-to-last for
        # vector-valued ones, batched or not
        dy = np.diff(samples, axis=-1 if h.ndim == 1 else -2)
        if h.ndim == 1:
            return dy @ (dh / self.dt)
        return np.einsum("...td,td->...", dy, dh) / self.dt


@dataclass(frozen=True)
class WienerPath(_GridModel):
    n_steps: int = 256
    d: int = 1
    horizon: float = 1.0
    name: str = field(default="wiener", init=False)

    def __post_init__(self):
        if self.n_steps < 1:
            raise DomainError("n_steps must be >= 1")
        if self.d < 1 or self.d > 3:
            raise DomainError("d must be in {1, 2, 3}")
        if not self.horizon > 0:
            raise DomainError("horizon must be positive")

    @property
    def dim(self) -> int:
        return self.d

    def sample_values(self, rng, count):
        shape = (count, self.n_steps) if self.d == 1 else (count, self.n_steps, self.d)
        inc = rng.standard_normal(shape)
        inc *= math.sqrt(self.dt)
        out_shape = (count, self.n_steps + 1) + (() if self.d == 1 else (self.d,))
        out = np.empty(out_shape)
        out[:, 0] = 0.0
        np.cumsum(inc, axis=1, out=out[:, 1:])
        return out

    def rkhs_norm_sq(self, h):
        return self._energy(self._path_shift(h))

    def paley_wiener(self, h, samples):
        return self._increment_functional(self._path_shift(h), np.asarray(samples, dtype=float))


@dataclass(frozen=True)
class BrownianBridge(_GridModel):
    n_steps: int = 256
    horizon: float = field(default=1.0, init=False)
    name: str = field(default="bridge", init=False)

    def __post_init__(self):
        if self.n_steps < 2:
            raise DomainError("n_steps must be >= 2")

    def sample_values(self, rng, count):
        inc = rng.standard_normal((count, self.n_steps)) * math.sqrt(self.dt)
        w = np.empty((count, self.n_steps + 1))
        w[:, 0] = 0.0
        np.cumsum(inc, axis=1, out=w[:, 1:])
        t = self.grid()
        return w - np.outer(w[:, -1], t)

    def rkhs_norm_sq(self, h):
        return self._energy(self._path_shift(h, pin_end=True))

    def paley_wiener(self, h, samples):
        h = self._path_shift(h, pin_end=True)
        return self._increment_functional(h, np.asarray(samples, dtype=float))


# -- free-function front ends ------------------------------------------------


def sample(model: GaussianModel, stream: RandomStream, count: int) -> list[Path]:
    if count < 1:
        raise DomainError("count must be >= 1")
    return model.sample(stream, count)


def rkhs_norm(model: GaussianModel, shift) -> float:
    """Cameron-Martin norm |h|; +inf when h is not in the shift space."""
    sq = model.rkhs_norm_sq(shift)
    return math.sqrt(sq) if math.isfinite(sq) else math.inf


def cm_log_weight(model: GaussianModel, shift, samples: np.ndarray) -> np.ndarray:
    """log of d(mu shifted by h)/d(mu) at each sample: z_h(y) - |h|^2/2."""
    h = shift.values if isinstance(shift, CmShift) else shift
    nsq = model.rkhs_norm_sq(h)
    if not math.isfinite(nsq):
        raise DomainError("shift is not in the Cameron-Martin space")
    return model.paley_wiener(h, samples) - 0.5 * nsq


def cm_weight(model: GaussianModel, shift, samples: np.ndarray) -> np.ndarray:
    """Density ratio of the h-shifted measure against the base measure."""
    return np.exp(cm_log_weight(model, shift, samples))


def parse_model(text: str) -> GaussianModel:
    """Parse a model descriptor like 'wiener:n=256,d=1,T=2' or 'scalar:sigma=2'."""
    head, _, tail = text.partition(":")
    kv: dict[str, str] = {}
    if tail:
        for part in tail.split(","):
            if "=" not in part:
                raise ConfigurationError(f"bad model parameter {part!r} in {text!r}")
            k, v = part.split("=", 1)
            kv[k.strip()] = v.strip()
    try:
        model: GaussianModel
        if head == "scalar":
            model = Scalar(sigma=float(kv.pop("sigma", 1.0)))
        elif head == "finite":
            lam = tuple(float(x) for x in kv.pop("lambdas", "1").split("/"))
            model = FiniteSpectrum(lambdas=lam)
        elif head == "wiener":
            model = WienerPath(
                n_steps=int(kv.pop("n", 256)),
                d=int(kv.pop("d", 1)),
                horizon=float(kv.pop("T", 1.0)),
            )
        elif head == "bridge":
            model = BrownianBridge(n_steps=int(kv.pop("n", 256)))
        else:
            raise ConfigurationError(
                f"unknown model kind {head!r} (scalar|finite|wiener|bridge)"
            )
    except (ValueError, DomainError) as exc:
        raise ConfigurationError(f"bad model descriptor {text!r}: {exc}") from exc
    if kv:
        raise ConfigurationError(f"unknown model parameters {sorted(kv)} in {text!r}")
    return model
