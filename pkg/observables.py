import logging
import math
from dataclasses import dataclass, field
from typing import Dict, FrozenSet, Iterable, List, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd

from errors import ContractViolation, DomainError
from hfunctions import StepFunction, zh_weight
from lattice import (Momentum, TorusSpec, lhat, momentum_grid, momentum_position, negate_momentum,
                     site_index)
from worldlines import (WorldlineConfig, energy_estimator, spin_grid, time_fourier,
                        total_flip_count)

logger = logging.getLogger(__name__)

MIN_BATCHES = 20


def integrated_autocorrelation_time(series: Sequence[float], batch_size: Optional[int] = None) -> float:
    """
    τ_int from batch means, with the convention Var(mean) ≈ 2τ·Var(x)/n

    Batch size defaults to ⌊√n⌋; the batch-means variance is
    b·Σ(batch mean − mean)²/(a − 1) for a batches.
    """
    x = np.asarray(series, dtype=float)
    n = x.size
    b = batch_size or int(math.floor(math.sqrt(n)))
    a = n // b if b else 0
    if a < 2:
        return 0.5
    x = x[:a * b]
    var = float(np.var(x, ddof=1))
    if var == 0.0:
        return 0.5
    means = x.reshape(a, b).mean(axis=1)
    var_bm = b * float(np.sum((means - x.mean()) ** 2)) / (a - 1)
    return max(0.5, var_bm / (2.0 * var))


def _fsum(arrays: List[np.ndarray]) -> np.ndarray:
    """Element-wise exactly rounded sum, independent of the order of arrays"""
    stacked = np.stack(arrays)
    flat = stacked.reshape(stacked.shape[0], -1)
    out = np.array([math.fsum(col) for col in flat.T])
    return out.reshape(stacked.shape[1:])


class EstimatorAccumulator:
    """
    Mergeable running moments with batch-means error bars

    Each observable is a numpy array of fixed shape. Values are summed into
    batches of batch_size samples; completed batches feed the standard error,
    all samples feed the mean. Sums are combined with math.fsum, so merging
    accumulators in any order gives bit-identical means.
    """

    def __init__(self, batch_size: int = 100, sources: Iterable[int] = ()):
        if batch_size <= 0:
            raise DomainError("batch_size must be positive")
        self.batch_size = batch_size
        self.sources: FrozenSet[int] = frozenset(sources)
        self._completed: Dict[str, List[Tuple[np.ndarray, np.ndarray]]] = {}
        self._frozen: Dict[str, List[Tuple[np.ndarray, np.ndarray, int]]] = {}
        self._filling: Dict[str, List] = {}
        self._warned = False

    def keys(self) -> List[str]:
        return sorted(set(self._completed) | set(self._frozen) | set(self._filling))

    def add(self, key: str, value) -> None:
        v = np.asarray(value, dtype=float)
        slot = self._filling.get(key)
        if slot is None:
            slot = [np.zeros_like(v), np.zeros_like(v), 0]
            self._filling[key] = slot
        slot[0] = slot[0] + v
        slot[1] = slot[1] + v * v
        slot[2] += 1
        if slot[2] == self.batch_size:
            self._completed.setdefault(key, []).append((slot[0], slot[1]))
            del self._filling[key]

    def add_many(self, values: Dict[str, np.ndarray]) -> None:
        for key, value in values.items():
            self.add(key, value)

    def _chunks(self, key: str) -> List[Tuple[np.ndarray, np.ndarray, int]]:
        chunks = [(s, ss, self.batch_size) for s, ss in self._completed.get(key, [])]
        chunks += self._frozen.get(key, [])
        if key in self._filling:
            s, ss, c = self._filling[key]
            chunks.append((s, ss, c))
        if not chunks:
            raise KeyError(f"no samples recorded for {key!r}")
        return chunks

    def count(self, key: str) -> int:
        return sum(c for _, _, c in self._chunks(key))

    def mean(self, key: str) -> np.ndarray:
        chunks = self._chunks(key)
        return _fsum([s for s, _, _ in chunks]) / sum(c for _, _, c in chunks)

    def naive_se(self, key: str) -> np.ndarray:
        """Standard error ignoring autocorrelation"""
        chunks = self._chunks(key)
        n = sum(c for _, _, c in chunks)
        mean = _fsum([s for s, _, _ in chunks]) / n
        var = (_fsum([ss for _, ss, _ in chunks]) / n - mean ** 2) * n / max(n - 1, 1)
        return np.sqrt(np.maximum(var, 0.0) / n)

    def batch_means(self, key: str) -> np.ndarray:
        """Means of the completed batches, shape (n_batches, *value_shape)"""
        batches = self._completed.get(key, [])
        if not batches:
            return np.empty((0,))
        return np.stack([s for s, _ in batches]) / self.batch_size

    def n_batches(self, key: str) -> int:
        return len(self._completed.get(key, []))

    def se(self, key: str) -> np.ndarray:
        """Batch-means standard error from the completed batches"""
        bm = self.batch_means(key)
        m = bm.shape[0]
        if m < 2:
            return np.full(np.shape(self.mean(key)), np.nan)
        if m < MIN_BATCHES and not self._warned:
            logger.warning("only %d completed batches for %r; error bars want >= %d",
                           m, key, MIN_BATCHES)
            self._warned = True
        return _batch_se(bm)

    def merge(self, other: "EstimatorAccumulator") -> "EstimatorAccumulator":
        """Combine two accumulators; the result owns no partially filled batch"""
        if other.batch_size != self.batch_size:
            raise ContractViolation("cannot merge accumulators with different batch sizes")
        out = EstimatorAccumulator(self.batch_size, self.sources | other.sources)
        for acc in (self, other):
            for key, batches in acc._completed.items():
                out._completed.setdefault(key, []).extend(batches)
            for key, chunks in acc._frozen.items():
                out._frozen.setdefault(key, []).extend(chunks)
            for key, (s, ss, c) in acc._filling.items():
                out._frozen.setdefault(key, []).append((s, ss, c))
        return out


def _batch_se(batch_means: np.ndarray) -> np.ndarray:
    m = batch_means.shape[0]
    mbar = _fsum(list(batch_means)) / m
    var = _fsum(list((batch_means - mbar) ** 2)) / (m - 1)
    return np.sqrt(var / m)


def merge_all(accumulators: Sequence[EstimatorAccumulator]) -> EstimatorAccumulator:
    accs = list(accumulators)
    if not accs:
        raise DomainError("nothing to merge")
    out = accs[0]
    for acc in accs[1:]:
        out = out.merge(acc)
    return out


@dataclass(frozen=True)
class FourierIndex:
    """A space–time frequency (k, l) with l = 2πj/β"""
    k: Momentum
    j: int

    def l(self, beta: float) -> float:
        return 2.0 * math.pi * self.j / beta


@dataclass
class MeasurementPlan:
    """
    What a chain records per configuration

    hprimes maps a name to the derivative h′ whose Z(h)/Z(0) is wanted;
    zeta_r lists the r values of ζ(r) = μ[cosh(r/δ)^|D|].
    """
    spec: TorusSpec
    beta: float
    lam: float
    delta: float
    time_grid: int = 64
    j_max: int = 16
    zeta_r: Tuple[float, ...] = ()
    hprimes: Dict[str, StepFunction] = field(default_factory=dict)

    def __post_init__(self):
        if self.time_grid <= 0:
            raise DomainError("time_grid must be positive")
        if self.j_max < 0:
            raise DomainError("j_max must be nonnegative")
        self.zeta_r = tuple(sorted({abs(float(r)) for r in self.zeta_r}))

    @property
    def j_values(self) -> np.ndarray:
        return np.arange(-self.j_max, self.j_max + 1)

    def negated_positions(self) -> np.ndarray:
        """Position of −k in the momentum grid for every k"""
        return np.array([momentum_position(self.spec, negate_momentum(self.spec, k))
                         for k in momentum_grid(self.spec)], dtype=int)


def schwinger_sample(cfg: WorldlineConfig, plan: MeasurementPlan) -> np.ndarray:
    """
    (1/(|Λ|T)) Σ_y Σ_s σ(y,s)σ(y+x, s+t) on the time grid, shape (|Λ|, T)

    The space–time cross-correlation is computed with FFTs over the torus and the circle.
    """
    spec, T = plan.spec, plan.time_grid
    grid = spin_grid(cfg, T).astype(float).reshape(spec.shape + (T,))
    F = np.fft.fftn(grid)
    corr = np.fft.ifftn(np.conj(F) * F).real / (spec.n_sites * T)
    return corr.reshape(spec.n_sites, T)


def chat_sample(cfg: WorldlineConfig, plan: MeasurementPlan,
                neg: Optional[np.ndarray] = None) -> np.ndarray:
    """
    |σ̂(k,l)|²/(β|Λ|) for every k and j = −J_max..J_max, shape (|Λ|, 2J_max+1)

    Only j ≥ 0 is computed; j < 0 is filled from |σ̂(−k,−l)|² = |σ̂(k,l)|², and
    the j = 0 column is symmetrised in k, so the index-negation symmetry is exact.
    """
    spec, J = plan.spec, plan.j_max
    n = spec.n_sites
    per_site = np.stack([time_fourier(cfg, x, np.arange(J + 1)) for x in range(n)])
    if spec.d:
        axes = tuple(range(spec.d))
        sig = np.fft.ifftn(per_site.reshape(spec.shape + (J + 1,)), axes=axes) * n
        sig = sig.reshape(n, J + 1)
    else:
        sig = per_site
    power = (sig.real ** 2 + sig.imag ** 2) / (cfg.beta * n)
    if neg is None:
        neg = plan.negated_positions()
    out = np.empty((n, 2 * J + 1))
    out[:, J] = 0.5 * (power[:, 0] + power[neg, 0])
    for j in range(1, J + 1):
        out[:, J + j] = power[:, j]
        out[:, J - j] = power[neg, j]
    return out


def measure(cfg: WorldlineConfig, plan: MeasurementPlan,
            neg: Optional[np.ndarray] = None) -> Dict[str, np.ndarray]:
    """All per-configuration values the plan asks for"""
    n_flips = total_flip_count(cfg)
    values = {
        'schwinger': schwinger_sample(cfg, plan),
        'chat': chat_sample(cfg, plan, neg),
        'flip_density': np.asarray(n_flips / plan.spec.n_sites),
        'energy': np.asarray(energy_estimator(cfg, plan.spec, plan.lam)),
    }
    if plan.zeta_r:
        values['zeta'] = np.array([math.cosh(r / plan.delta) ** n_flips for r in plan.zeta_r])
    for name, hprime in plan.hprimes.items():
        values[f'zratio:{name}'] = np.asarray(zh_weight(cfg, hprime, plan.delta))
    return values


class ChainRecorder:
    """Callable handed to the sampler: measures each sample into one accumulator"""

    def __init__(self, plan: MeasurementPlan, batch_size: int, seed: int):
        self.plan = plan
        self.acc = EstimatorAccumulator(batch_size, sources=[seed])
        self._neg = plan.negated_positions()

    def __call__(self, cfg: WorldlineConfig) -> None:
        self.acc.add_many(measure(cfg, self.plan, self._neg))


def accumulate(configs: Iterable[WorldlineConfig], plan: MeasurementPlan,
               batch_size: int = 100, source: int = 0) -> EstimatorAccumulator:
    recorder = ChainRecorder(plan, batch_size, source)
    for cfg in configs:
        recorder(cfg)
    return recorder.acc


def _time_position(plan: MeasurementPlan, t: float) -> int:
    m = t * plan.time_grid / plan.beta
    mi = int(round(m))
    if abs(m - mi) > 1e-9 or not 0 <= mi < plan.time_grid:
        raise DomainError(f"time {t} is not on the output grid of {plan.time_grid} points")
    return mi


def _site(plan: MeasurementPlan, x: Union[int, Sequence[int]]) -> int:
    if isinstance(x, (int, np.integer)):
        if not 0 <= x < plan.spec.n_sites:
            raise DomainError(f"site index {x} outside [0, {plan.spec.n_sites})")
        return int(x)
    return site_index(plan.spec, tuple(x))


def _pair(mean, se) -> Tuple[float, float]:
    return float(mean), float(se)


def schwinger_estimate(acc: EstimatorAccumulator, plan: MeasurementPlan,
                       x: Union[int, Sequence[int]], t: float) -> Tuple[float, float]:
    """(mean, SE) of c(x, t) with x a displacement and t on the output grid"""
    xi, m = _site(plan, x), _time_position(plan, t)
    return _pair(acc.mean('schwinger')[xi, m], acc.se('schwinger')[xi, m])


def _chat_position(plan: MeasurementPlan, idx: FourierIndex) -> Tuple[int, int]:
    if abs(idx.j) > plan.j_max:
        raise DomainError(f"|j|={abs(idx.j)} exceeds the truncation J_max={plan.j_max}")
    return momentum_position(plan.spec, idx.k), plan.j_max + idx.j


def chat_estimate(acc: EstimatorAccumulator, plan: MeasurementPlan,
                  idx: FourierIndex) -> Tuple[float, float]:
    """(mean, SE) of ĉ(k,l) = μ[|σ̂(k,l)|²]/(β|Λ|)"""
    kp, jp = _chat_position(plan, idx)
    return _pair(acc.mean('chat')[kp, jp], acc.se('chat')[kp, jp])


def susceptibility_estimate(acc: EstimatorAccumulator, plan: MeasurementPlan) -> Tuple[float, float]:
    """χ = ĉ(0,0)"""
    zero = FourierIndex(k=momentum_grid(plan.spec)[0], j=0)
    return chat_estimate(acc, plan, zero)


def bubble_estimate(acc1: EstimatorAccumulator, acc2: EstimatorAccumulator,
                    plan: MeasurementPlan) -> Tuple[float, float, float]:
    """
    Replica-product bubble (1/(β|Λ|)) Σ_{k,|j|≤J} ĉ₁(k,l)ĉ₂(k,l), its SE, and
    the infrared bound on the discarded |j| > J terms

    The two accumulators must come from independent chains.
    """
    if acc1 is acc2 or (acc1.sources & acc2.sources):
        raise ContractViolation(
            f"bubble halves share chains {sorted(acc1.sources & acc2.sources)}; they must be independent")
    norm = plan.beta * plan.spec.n_sites
    c1, c2 = acc1.mean('chat'), acc2.mean('chat')
    mean = float(np.sum(c1 * c2)) / norm
    var = 0.0
    for acc, other in ((acc1, c2), (acc2, c1)):
        bm = acc.batch_means('chat')
        if bm.shape[0] < 2:
            var = float('nan')
            break
        series = np.tensordot(bm, other, axes=other.ndim) / norm
        var += float(_batch_se(series[:, None])[0]) ** 2
    tail = infrared_tail_bound(plan.spec, plan.beta, plan.lam, plan.delta, plan.j_max)
    return mean, math.sqrt(var), tail


def zeta_estimate(acc: EstimatorAccumulator, plan: MeasurementPlan, r: float) -> Tuple[float, float]:
    """(mean, SE) of ζ(r) = μ[cosh(r/δ)^|D|]; ζ is even and ζ(0) = 1"""
    if r == 0.0:
        return 1.0, 0.0
    try:
        pos = plan.zeta_r.index(abs(float(r)))
    except ValueError:
        raise DomainError(f"zeta({r}) was not recorded; recorded r values: {plan.zeta_r}") from None
    return _pair(acc.mean('zeta')[pos], acc.se('zeta')[pos])


def mean_flip_density(acc: EstimatorAccumulator, plan: MeasurementPlan) -> Tuple[float, float]:
    """(mean, SE) of |D|/|Λ|"""
    return _pair(acc.mean('flip_density'), acc.se('flip_density'))


def zratio_estimate(acc: EstimatorAccumulator, plan: MeasurementPlan,
                    hprime: Union[str, StepFunction]) -> Tuple[float, float]:
    """(mean, SE) of Z(h)/Z(0) = μ[zh_weight]; h′ ≡ 0 gives exactly 1"""
    if isinstance(hprime, StepFunction):
        if not np.any(hprime.values):
            return 1.0, 0.0
        names = [n for n, h in plan.hprimes.items() if h.allclose(hprime, atol=0.0)]
        if not names:
            raise DomainError("this h' was not recorded by the measurement plan")
        name = names[0]
    else:
        name = hprime
        if name not in plan.hprimes:
            raise DomainError(f"no recorded h' named {name!r}")
        if not np.any(plan.hprimes[name].values):
            return 1.0, 0.0
    key = f'zratio:{name}'
    return _pair(acc.mean(key), acc.se(key))


# Infrared bound and the tail of the bubble sum

def infrared_denominator(lh, l, lam: float, delta: float):
    """2λL̂(k) + l²/(2δ)"""
    return 2.0 * lam * np.asarray(lh) + np.asarray(l) ** 2 / (2.0 * delta)


def infrared_bound(lh, l, lam: float, delta: float):
    """48/(2λL̂ + l²/2δ); infinite where the denominator vanishes"""
    den = infrared_denominator(lh, l, lam, delta)
    with np.errstate(divide='ignore'):
        return np.where(den > 0, 48.0 / np.where(den > 0, den, 1.0), np.inf)


def infrared_bound_sharp(lh, l, lam: float, delta: float):
    """(2λL̂ + 48l²/2δ)/(2λL̂ + l²/2δ)²"""
    den = infrared_denominator(lh, l, lam, delta)
    num = 2.0 * lam * np.asarray(lh) + 48.0 * np.asarray(l) ** 2 / (2.0 * delta)
    safe = np.where(den > 0, den, 1.0)
    return np.where(den > 0, num / safe ** 2, np.inf)


def _inverse_square_tail(V: float, a: float) -> float:
    """
    ∫_V^∞ dv/(a + v²)² for V > 0, a ≥ 0

    Closed form arctan(√a/V)/(2a^{3/2}) − V/(2a(a+V²)); when a ≪ V² the
    bound 1/(3V³) is used (it dominates the integral and avoids cancellation).
    """
    if a < 1e-4 * V * V:
        return 1.0 / (3.0 * V ** 3)
    return math.atan(math.sqrt(a) / V) / (2.0 * a ** 1.5) - V / (2.0 * a * (a + V * V))


def infrared_tail_bound(spec: TorusSpec, beta: float, lam: float, delta: float, j_max: int) -> float:
    """
    Bound on (1/(β|Λ|)) Σ_k Σ_{|j|>J} ĉ(k,l)² from ĉ ≤ 48/(2λL̂ + l²/2δ)

    With a(k) = 4λδL̂(k), each term is (96δ)²/(a + l²)²; the sum over j > J is
    at most its first term plus the integral from J+1 onward.
    """
    if j_max < 0:
        raise DomainError("j_max must be nonnegative")
    c = 2.0 * math.pi / beta
    V = c * (j_max + 1)
    total = 0.0
    for k in momentum_grid(spec):
        a = 4.0 * lam * delta * lhat(k)
        first = 1.0 / (a + V * V) ** 2
        total += 2.0 * (first + _inverse_square_tail(V, a) / c)
    return (96.0 * delta) ** 2 * total / (beta * spec.n_sites)


def bubble_ir_upper_bound(spec: TorusSpec, beta: float, lam: float, delta: float, chi: float) -> float:
    """
    Plancherel with the infrared bound at every (k,l) ≠ (0,0):
    B ≤ (1/(β|Λ|))[χ² + Σ_{(k,l)≠(0,0)} (48/(2λL̂ + l²/2δ))²]
    """
    l0 = 0.0
    for k in momentum_grid(spec):
        if k.is_zero:
            continue
        den = 2.0 * lam * lhat(k)
        if den <= 0.0:
            return math.inf
        l0 += (48.0 / den) ** 2
    return (chi ** 2 + l0) / (beta * spec.n_sites) + infrared_tail_bound(spec, beta, lam, delta, 0)


def choose_j_max(spec: TorusSpec, beta: float, lam: float, delta: float,
                 reference_b: float, rel: float = 1e-3, j_cap: int = 4096) -> int:
    """Smallest J with infrared_tail_bound(J) < rel·reference_b"""
    if not reference_b > 0:
        raise DomainError(f"reference bubble must be positive, got {reference_b}")
    target = rel * reference_b
    lo, hi = 0, 1
    while infrared_tail_bound(spec, beta, lam, delta, hi) >= target:
        lo, hi = hi, 2 * hi
        if hi > j_cap:
            logger.warning("J_max capped at %d; tail bound still above %.3g", j_cap, target)
            return j_cap
    if infrared_tail_bound(spec, beta, lam, delta, lo) < target:
        return lo
    while hi - lo > 1:
        mid = (lo + hi) // 2
        if infrared_tail_bound(spec, beta, lam, delta, mid) < target:
            hi = mid
        else:
            lo = mid
    return hi


# Tables in the CSV schemas

def _k_columns(spec: TorusSpec) -> List[str]:
    return [f'k_index_{i}' for i in range(spec.d)]


def frame_chat(spec: TorusSpec, beta: float, lam: float, delta: float, j_max: int,
               mean: np.ndarray, se: np.ndarray) -> pd.DataFrame:
    """Long table k_index…, j, l, lhat, mean, se, bound48, bound_sharp"""
    rows = []
    for kp, k in enumerate(momentum_grid(spec)):
        lh = lhat(k)
        for jp, j in enumerate(range(-j_max, j_max + 1)):
            l = 2.0 * math.pi * j / beta
            row = {name: m for name, m in zip(_k_columns(spec), k.index)}
            row.update({'j': j, 'l': l, 'lhat': lh,
                        'mean': float(mean[kp, jp]), 'se': float(se[kp, jp])})
            rows.append(row)
    df = pd.DataFrame(rows, columns=_k_columns(spec) + ['j', 'l', 'lhat', 'mean', 'se'])
    df['bound48'] = infrared_bound(df['lhat'].to_numpy(), df['l'].to_numpy(), lam, delta)
    df['bound_sharp'] = infrared_bound_sharp(df['lhat'].to_numpy(), df['l'].to_numpy(), lam, delta)
    return df


def chat_table(acc: EstimatorAccumulator, plan: MeasurementPlan) -> pd.DataFrame:
    return frame_chat(plan.spec, plan.beta, plan.lam, plan.delta, plan.j_max,
                      acc.mean('chat'), acc.se('chat'))


def schwinger_table(acc: EstimatorAccumulator, plan: MeasurementPlan) -> pd.DataFrame:
    """Long table x_index, t, mean, se"""
    mean, se = acc.mean('schwinger'), acc.se('schwinger')
    n, T = mean.shape
    x_idx, m_idx = np.meshgrid(np.arange(n), np.arange(T), indexing='ij')
    return pd.DataFrame({
        'x_index': x_idx.ravel(),
        't': m_idx.ravel() * (plan.beta / T),
        'mean': mean.ravel(),
        'se': se.ravel(),
    })
