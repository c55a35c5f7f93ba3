"""Path norms on grid data: sup, Lp, and Hoelder seminorms on a subinterval.

Conventions that downstream modules rely on:

* Vector-valued paths (d > 1) are reduced pointwise by the Euclidean norm
  before the time norm is applied, so centered sup-balls match the
  Euclidean-ball Dirichlet eigenvalue geometry.
* Degenerate draws (scalar / finite spectrum, dt = 0) use sequence-space
  semantics: sup is the max coordinate modulus, Lp the coordinate p-sum; the
  interval field is ignored and Hoelder is undefined.
* Lp uses trapezoidal quadrature on the grid, which is exactly additive
  across a partition of the interval.
* Hoelder evaluates all pairs via all grid lags (exact on a uniform grid) up
  to 4096 nodes, and falls back to a documented dyadic-lag underestimate
  beyond that.

Scaling family facts used by the constants laboratory: rescaling t -> ct maps
the norm on I/c to c^s times the norm on I with the self-similarity exponent
s = 0 (sup), s = beta (Hoelder), s = -1/p (Lp, the Jacobian factor). The decay
exponent gamma = (1/2 - s - 1/p)^{-1} is 2 for sup and every Lp, and
(1/2 - beta)^{-1} for Hoelder.
"""
from __future__ import annotations

import math
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigurationError, DomainError
from .models import Path

_HOELDER_EXACT_MAX_NODES = 4097


@dataclass(frozen=True)
class NormSpec:
    """Which norm, with its exponents and the time interval it acts on."""

    kind: str  # "sup" | "lp" | "hoelder"
    p: float = math.inf
    beta: float = 0.0
    interval: tuple[float, float] = (0.0, 1.0)

    def __post_init__(self):
        if self.kind not in ("sup", "lp", "hoelder"):
            raise DomainError(f"unknown norm kind {self.kind!r}")
        if self.kind == "lp":
            if not (np.isfinite(self.p) and self.p >= 1):
                raise DomainError(f"lp norm needs finite p >= 1, got {self.p}")
        elif self.p != math.inf:
            raise DomainError(f"{self.kind} norm does not take a p exponent")
        if self.kind == "hoelder":
            if not (0.0 <= self.beta < 0.5):
                raise DomainError(f"hoelder exponent must be in [0, 1/2), got {self.beta}")
        elif self.beta != 0.0:
            raise DomainError(f"{self.kind} norm does not take a beta exponent")
        a, b = self.interval
        if not (b > a):
            raise DomainError(f"empty interval {self.interval}")

    # -- scaling metadata ---------------------------------------------------
    @property
    def sim_exponent(self) -> float:
        """Self-similarity exponent of the interval-indexed family."""
        if self.kind == "sup":
            return 0.0
        if self.kind == "hoelder":
            return self.beta
        return -1.0 / self.p

    @property
    def gamma(self) -> float:
        """Small-ball decay exponent for Brownian motion under this norm."""
        inv_p = 0.0 if self.kind != "lp" else 1.0 / self.p
        denom = 0.5 - self.sim_exponent - inv_p
        if denom <= 0:
            raise DomainError("norm family outside the sub-1/2 regularity regime")
        return 1.0 / denom

    @property
    def soft_q(self) -> float:
        """Window-scaling exponent of the soft tracking functional (Lp only)."""
        if self.kind != "lp":
            raise DomainError("soft tracking exponent is defined for lp norms only")
        return self.p * (0.5 - self.sim_exponent)

    def translation_invariant(self) -> bool:
        """True when constants are in the null space (Hoelder seminorms)."""
        return self.kind == "hoelder"

    def rescaled(self, c: float) -> "NormSpec":
        a, b = self.interval
        return NormSpec(self.kind, self.p, self.beta, (a / c, b / c))

    def describe(self) -> str:
        if self.kind == "sup":
            return "sup"
        if self.kind == "lp":
            return f"lp:p={self.p:g}"
        return f"hoelder:beta={self.beta:g}"


def parse_norm(text: str) -> NormSpec:
    """Parse a norm descriptor like 'sup', 'lp:p=2', 'hoelder:beta=0.25,a=0,b=1'."""
    head, _, tail = text.partition(":")
    kv: dict[str, str] = {}
    if tail:
        for part in tail.split(","):
            if "=" not in part:
                raise ConfigurationError(f"bad norm parameter {part!r} in {text!r}")
            k, v = part.split("=", 1)
            kv[k.strip()] = v.strip()
    try:
        interval = (float(kv.pop("a", 0.0)), float(kv.pop("b", 1.0)))
        if head == "sup":
            spec = NormSpec("sup", interval=interval)
        elif head == "lp":
            spec = NormSpec("lp", p=float(kv.pop("p", 2.0)), interval=interval)
        elif head == "hoelder":
            spec = NormSpec("hoelder", beta=float(kv.pop("beta", 0.25)), interval=interval)
        else:
            raise ConfigurationError(f"unknown norm kind {head!r} (sup|lp|hoelder)")
    except (ValueError, DomainError) as exc:
        raise ConfigurationError(f"bad norm descriptor {text!r}: {exc}") from exc
    if kv:
        raise ConfigurationError(f"unknown norm parameters {sorted(kv)} in {text!r}")
    return spec


# -- evaluation --------------------------------------------------------------


def _pointwise_modulus(values: np.ndarray) -> np.ndarray:
    """Reduce (B, n, d) to (B, n) by the Euclidean norm; (B, n) passes through."""
    if values.ndim >= 3:
        return np.sqrt(np.einsum("...td,...td->...t", values, values))
    return np.abs(values)


def _slice_indices(n_nodes: int, dt: float, interval: tuple[float, float]) -> tuple[int, int]:
    a, b = interval
    horizon = dt * (n_nodes - 1)
    ia = a / dt
    ib = b / dt
    ra, rb = round(ia), round(ib)
    if abs(ia - ra) > 1e-9 or abs(ib - rb) > 1e-9:
        raise DomainError(f"interval {interval} does not align with the grid (dt={dt:g})")
    if ra < 0 or rb > n_nodes - 1:
        raise DomainError(f"interval {interval} not covered by the path (horizon {horizon:g})")
    return int(ra), int(rb)


def eval_norm_batch(values: np.ndarray, dt: float, spec: NormSpec) -> np.ndarray:
    """Evaluate the norm on a batch. values: (B, n+1[, d]) paths, or (B, k)
    degenerate draws with dt == 0; a 1-d degenerate batch is (B,) draws of a
    single coordinate each."""
    values = np.asarray(values)
    if dt == 0.0:
        mod = np.abs(values)
        if values.ndim == 1:
            return mod
        if spec.kind == "sup":
            return mod.max(axis=-1)
        if spec.kind == "lp":
            return (mod**spec.p).sum(axis=-1) ** (1.0 / spec.p)
        raise DomainError("hoelder norm is undefined for degenerate (gridless) draws")
    mod_needed = spec.kind != "hoelder"
    ia, ib = _slice_indices(values.shape[1], dt, spec.interval)
    seg = values[:, ia : ib + 1]
    if spec.kind == "sup":
        return _pointwise_modulus(seg).max(axis=1)
    if spec.kind == "lp":
        a = _pointwise_modulus(seg) ** spec.p
        acc = a[:, 1:-1].sum(axis=1) + 0.5 * (a[:, 0] + a[:, -1])
        return (dt * acc) ** (1.0 / spec.p)
    return _hoelder_batch(seg, dt, spec.beta)


def _hoelder_batch(seg: np.ndarray, dt: float, beta: float) -> np.ndarray:
    n = seg.shape[1]
    if n > _HOELDER_EXACT_MAX_NODES:
        lags: list[int] = list(range(1, 65))
        lag = 128
        while lag < n:
            lags.append(lag)
            lag *= 2
        lags = [L for L in lags if L < n]
    else:
        lags = list(range(1, n))
    out = np.zeros(seg.shape[0])
    for L in lags:
        diff = _pointwise_modulus(seg[:, L:] - seg[:, :-L]).max(axis=1)
        np.maximum(out, diff / (L * dt) ** beta, out=out)
    return out


def eval_norm(path: Path | np.ndarray, spec: NormSpec, dt: float | None = None) -> float:
    """Single-draw convenience wrapper around eval_norm_batch."""
    if isinstance(path, Path):
        values, dt = path.values, path.dt
    else:
        values = np.asarray(path)
        if dt is None:
            raise ConfigurationError("dt is required when passing a bare array")
    return float(eval_norm_batch(values[None, ...], dt, spec)[0])


# -- structural checks -------------------------------------------------------


@dataclass(frozen=True)
class SimilarityReport:
    c: float
    norm_whole: float
    norm_rescaled: float
    measured_exponent: float
    expected_exponent: float
    residual: float  # |measured - expected| * log(c), in log-norm units


def check_self_similarity(
    spec: NormSpec, values: np.ndarray, dt: float, c: float
) -> SimilarityReport:
    """Compare ||f(c .)|| on I/c against c^s ||f|| on I.

    The rescaled path is read off by linear interpolation, exact when c maps
    grid nodes to grid nodes.
    """
    if c <= 1:
        raise DomainError("rescaling factor c must be > 1")
    values = np.asarray(values, dtype=float)
    if values.ndim != 1:
        raise DomainError("self-similarity check expects a single scalar path")
    n = values.shape[0]
    times = dt * np.arange(n)
    whole = eval_norm(values, spec, dt)
    a, b = spec.interval
    sub = spec.rescaled(c)
    ia, ib = _slice_indices(n, dt, (a, b))
    n_sub = ib - ia  # keep the node count of the subinterval grid
    t_sub = np.linspace(a / c, b / c, n_sub + 1)
    f_of_ct = np.interp(c * t_sub, times, values)
    dt_sub = (b - a) / (c * n_sub)
    sub_full = NormSpec(sub.kind, sub.p, sub.beta, (0.0, (b - a) / c))
    rescaled = eval_norm(f_of_ct, sub_full, dt_sub)
    if whole <= 0 or rescaled <= 0:
        raise DomainError("norms must be positive for exponent measurement")
    measured = math.log(rescaled / whole) / math.log(c)
    expected = spec.sim_exponent
    return SimilarityReport(
        c=c,
        norm_whole=whole,
        norm_rescaled=rescaled,
        measured_exponent=measured,
        expected_exponent=expected,
        residual=abs(measured - expected) * math.log(c),
    )


@dataclass(frozen=True)
class SuperadditivityReport:
    whole: float
    parts: tuple[float, ...]
    aggregated: float
    slack: float  # whole - aggregate; >= 0 (up to tolerance) when the family is superadditive


def check_superadditivity(
    spec: NormSpec, values: np.ndarray, dt: float, breakpoints: tuple[float, ...]
) -> SuperadditivityReport:
    """Whole-interval norm against the p-aggregation over a partition.

    For sup and Hoelder the aggregation is the max of the parts; for Lp the
    p-sum (exact additivity of the trapezoid makes the slack ~ 0 for Lp).
    """
    a, b = spec.interval
    pts = (a,) + tuple(breakpoints) + (b,)
    if any(pts[i + 1] <= pts[i] for i in range(len(pts) - 1)):
        raise DomainError("breakpoints must be strictly increasing inside the interval")
    whole = eval_norm(values, spec, dt)
    parts = tuple(
        eval_norm(values, NormSpec(spec.kind, spec.p, spec.beta, (pts[i], pts[i + 1])), dt)
        for i in range(len(pts) - 1)
    )
    if spec.kind == "lp":
        agg = float(np.sum(np.asarray(parts) ** spec.p) ** (1.0 / spec.p))
    else:
        agg = max(parts)
    return SuperadditivityReport(whole=whole, parts=parts, aggregated=agg, slack=whole - agg)
