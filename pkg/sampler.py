import json
import logging
import math
from dataclasses import dataclass, field
from pathlib import Path
from typing import Callable, Dict, Optional, Tuple, Union

import numpy as np
from tqdm import tqdm

from errors import ContractViolation, DomainError
from lattice import TorusSpec
from observables import ChainRecorder, EstimatorAccumulator, MeasurementPlan, integrated_autocorrelation_time
from worldlines import (WorldlineConfig, arc_overlap, energy_estimator, flip_line, insert_pair,
                        move_flip, remove_pair, shift_arc)

logger = logging.getLogger(__name__)

MOVES = ('flip', 'insert', 'delete', 'shift')


@dataclass
class SamplerParams:
    """
    Target and schedule of one Markov chain on (ξ, D)

    move_mix gives the probabilities of (line flip, pair insert, pair delete, shift).
    burn_in=None asks for 10× the integrated autocorrelation time of the energy,
    measured on a pilot run of pilot_sweeps sweeps.
    """
    lam: float
    delta: float
    beta: float
    move_mix: Tuple[float, float, float, float] = (0.1, 0.4, 0.4, 0.1)
    seed: int = 0
    sweeps: int = 10_000
    burn_in: Optional[int] = None
    thinning: int = 1
    pilot_sweeps: int = 2_000
    collision_tol: float = 1e-12      # relative to beta

    def __post_init__(self):
        if self.lam < 0:
            raise DomainError(f"lambda must be >= 0, got {self.lam}")
        if not self.delta > 0:
            raise DomainError(f"delta must be positive, got {self.delta}")
        if not self.beta > 0:
            raise DomainError(f"beta must be positive, got {self.beta}")
        mix = tuple(float(p) for p in self.move_mix)
        if len(mix) != 4 or any(p < 0 for p in mix):
            raise DomainError("move_mix needs four nonnegative probabilities")
        if abs(sum(mix) - 1.0) > 1e-12:
            raise DomainError(f"move_mix must sum to 1, got {sum(mix)}")
        if mix[1] != mix[2]:
            raise DomainError("pair insert and pair delete must have equal probability")
        self.move_mix = mix
        if self.sweeps <= 0:
            raise DomainError("sweeps must be positive")
        if self.thinning <= 0:
            raise DomainError("thinning must be positive")
        if self.burn_in is not None and self.burn_in < 0:
            raise DomainError("burn_in must be nonnegative")
        if not 0 <= self.seed < 2 ** 64:
            raise DomainError("seed must fit in 64 bits")


@dataclass
class ChainState:
    """Everything a chain carries between steps; owned by a single chain"""
    config: WorldlineConfig
    spec: TorusSpec
    rng: np.random.Generator
    step: int = 0
    attempts: Dict[str, int] = field(default_factory=lambda: {m: 0 for m in MOVES})
    accepts: Dict[str, int] = field(default_factory=lambda: {m: 0 for m in MOVES})

    def acceptance_rates(self) -> Dict[str, float]:
        return {m: (self.accepts[m] / self.attempts[m]) if self.attempts[m] else float('nan')
                for m in MOVES}


def make_rng(seed: int) -> np.random.Generator:
    return np.random.Generator(np.random.PCG64(seed))


def init_free(spec: TorusSpec, beta: float, delta: float, rng: np.random.Generator) -> WorldlineConfig:
    """
    Exact draw from the free measure: ξ_x uniform bits, D_x a rate-δ Poisson
    process on [0, β) conditioned on an even number of points

    The conditioning is done by resampling until the count is even, which
    takes at most two attempts on average since P(even) = (1 + e^{−2δβ})/2.
    """
    if not delta > 0:
        raise DomainError(f"delta must be positive, got {delta}")
    xi = rng.integers(0, 2, size=spec.n_sites)
    flips = []
    for _ in range(spec.n_sites):
        while True:
            count = int(rng.poisson(delta * beta))
            if count % 2 == 0:
                break
        flips.append(np.sort(rng.random(count) * beta))
    return WorldlineConfig(beta=beta, xi=xi, flips=flips)


def new_chain(spec: TorusSpec, params: SamplerParams) -> ChainState:
    rng = make_rng(params.seed)
    cfg = init_free(spec, params.beta, params.delta, rng)
    return ChainState(config=cfg, spec=spec, rng=rng)


def _accept(rng: np.random.Generator, log_ratio: float) -> bool:
    if log_ratio >= 0.0:
        return True
    return bool(rng.random() < math.exp(log_ratio))


def _neighbour_overlap(state: ChainState, x: int, a: float, b: float) -> float:
    cfg = state.config
    return sum(arc_overlap(cfg, x, y, a, b) for y in state.spec.neighbor_table[x])


def _record(state: ChainState, move: str, accepted: bool) -> bool:
    state.attempts[move] += 1
    if accepted:
        state.accepts[move] += 1
    return accepted


def move_line_flip(state: ChainState, params: SamplerParams) -> bool:
    """
    Propose σ(x,·) → −σ(x,·) at a uniform site; accept with min(1, e^{λΔ}),
    Δ = −2 Σ_{y∼x} ∫σ(x)σ(y)
    """
    cfg = state.config
    x = int(state.rng.integers(cfg.n_sites))
    log_ratio = 0.0
    if params.lam:
        log_ratio = -2.0 * params.lam * _neighbour_overlap(state, x, 0.0, cfg.beta)
    accepted = _accept(state.rng, log_ratio)
    if accepted:
        flip_line(cfg, x)
    return _record(state, 'flip', accepted)


def _collides(times: np.ndarray, t: float, tol: float) -> bool:
    return bool(times.size and np.min(np.abs(times - t)) < tol)


def move_pair_insert(state: ChainState, params: SamplerParams) -> bool:
    """
    Add two uniform flip times s, t at a uniform site, toggling σ on [min, max)

    A_ins = min(1, e^{λΔ} δ²β² / (2·C(n+2, 2))) with n the flip count before the move.
    """
    cfg = state.config
    beta = cfg.beta
    tol = params.collision_tol * beta
    x = int(state.rng.integers(cfg.n_sites))
    s, t = state.rng.random(2) * beta
    f = cfg.flips[x]
    if abs(s - t) < tol or _collides(f, s, tol) or _collides(f, t, tol):
        return _record(state, 'insert', False)
    a, b = (s, t) if s < t else (t, s)
    n = f.size
    log_ratio = math.log((params.delta * beta) ** 2) - math.log(2.0 * math.comb(n + 2, 2))
    if params.lam:
        log_ratio += -2.0 * params.lam * _neighbour_overlap(state, x, a, b)
    accepted = _accept(state.rng, log_ratio)
    if accepted:
        insert_pair(cfg, x, a, b)
    return _record(state, 'insert', accepted)


def move_pair_delete(state: ChainState, params: SamplerParams) -> bool:
    """
    Remove a uniformly chosen unordered pair of flips at a uniform site

    A_del = min(1, e^{λΔ} 2·C(n, 2) / (δ²β²)); sites with fewer than two flips reject.
    """
    cfg = state.config
    beta = cfg.beta
    x = int(state.rng.integers(cfg.n_sites))
    f = cfg.flips[x]
    n = f.size
    if n < 2:
        return _record(state, 'delete', False)
    i, j = sorted(int(v) for v in state.rng.choice(n, size=2, replace=False))
    a, b = float(f[i]), float(f[j])
    log_ratio = math.log(2.0 * math.comb(n, 2)) - math.log((params.delta * beta) ** 2)
    if params.lam:
        log_ratio += -2.0 * params.lam * _neighbour_overlap(state, x, a, b)
    accepted = _accept(state.rng, log_ratio)
    if accepted:
        remove_pair(cfg, x, i, j)
    return _record(state, 'delete', accepted)


def move_shift(state: ChainState, params: SamplerParams) -> bool:
    """
    Move one flip to a uniform time in the open gap between its circular neighbours

    The flip count never changes; accept with min(1, e^{λΔ}).
    """
    cfg = state.config
    beta = cfg.beta
    tol = params.collision_tol * beta
    x = int(state.rng.integers(cfg.n_sites))
    f = cfg.flips[x]
    n = f.size
    if n == 0:
        return _record(state, 'shift', False)
    i = int(state.rng.integers(n))
    prev, nxt = float(f[i - 1]), float(f[(i + 1) % n])
    gap = beta if n == 2 else (nxt - prev) % beta
    new_t = (prev + state.rng.random() * gap) % beta
    if _collides(np.array([prev, nxt]), new_t, tol) or new_t >= beta:
        return _record(state, 'shift', False)
    a, b = shift_arc(f, i, new_t)
    log_ratio = 0.0
    if params.lam:
        log_ratio = -2.0 * params.lam * _neighbour_overlap(state, x, a, b)
    accepted = _accept(state.rng, log_ratio)
    if accepted:
        move_flip(cfg, x, i, new_t)
    return _record(state, 'shift', accepted)


_MOVE_FUNCS = (move_line_flip, move_pair_insert, move_pair_delete, move_shift)


def sweep(state: ChainState, params: SamplerParams) -> ChainState:
    """|Λ| move attempts drawn from the move mix"""
    kinds = state.rng.choice(4, size=state.config.n_sites, p=params.move_mix)
    for kind in kinds:
        _MOVE_FUNCS[kind](state, params)
    state.step += 1
    return state


def estimate_burn_in(state: ChainState, params: SamplerParams,
                     pilot_sweeps: Optional[int] = None) -> Tuple[int, float]:
    """
    Run a pilot and return (further burn-in sweeps, τ_int of the energy)

    The burn-in target is 10·τ_int sweeps; the pilot itself counts toward it.
    """
    pilot = pilot_sweeps or params.pilot_sweeps
    energies = np.empty(pilot)
    for s in range(pilot):
        sweep(state, params)
        energies[s] = energy_estimator(state.config, state.spec, params.lam)
    tau = integrated_autocorrelation_time(energies)
    target = int(math.ceil(10.0 * tau))
    extra = max(0, target - pilot)
    logger.info("pilot of %d sweeps: tau_int(energy) = %.2f sweeps, burn-in target %d, extra %d",
                pilot, tau, target, extra)
    if target > pilot:
        logger.warning("pilot run shorter than the burn-in target; consider more pilot sweeps")
    return extra, tau


def run_chain(state: ChainState, params: SamplerParams,
              on_sample: Callable[[WorldlineConfig], None],
              progress: bool = False) -> Dict:
    """
    Burn in, then sweep params.sweeps times, calling on_sample every
    params.thinning sweeps with the current configuration
    """
    tau = None
    if params.burn_in is None:
        burn_in, tau = estimate_burn_in(state, params)
    else:
        burn_in = params.burn_in
    for _ in range(burn_in):
        sweep(state, params)

    n_samples = 0
    for s in tqdm(range(params.sweeps), disable=not progress, desc=f"chain {params.seed}"):
        sweep(state, params)
        if (s + 1) % params.thinning == 0:
            on_sample(state.config)
            n_samples += 1

    rates = state.acceptance_rates()
    logger.debug("chain seed=%d acceptance %s", params.seed, rates)
    return {
        'seed': params.seed,
        'burn_in': burn_in,
        'tau_int': tau,
        'samples': n_samples,
        'sweeps': state.step,
        'acceptance': rates,
    }


def run_replica(spec: TorusSpec, params: SamplerParams, plan: MeasurementPlan,
                batch_size: int = 100, progress: bool = False) -> Tuple[EstimatorAccumulator, Dict]:
    """One seeded chain measured into its own accumulator"""
    state = new_chain(spec, params)
    recorder = ChainRecorder(plan, batch_size, params.seed)
    info = run_chain(state, params, recorder, progress)
    return recorder.acc, info


def rng_state_hex(rng: np.random.Generator) -> str:
    return json.dumps(rng.bit_generator.state, sort_keys=True).encode().hex()


def rng_from_hex(blob: str) -> np.random.Generator:
    bit_gen = np.random.PCG64()
    bit_gen.state = json.loads(bytes.fromhex(blob).decode())
    return np.random.Generator(bit_gen)


def save_checkpoint(state: ChainState, path: Union[str, Path]) -> None:
    """Worldline document plus torus, counters and the RNG state as hex"""
    doc = state.config.to_dict()
    doc.update({
        'd': state.spec.d,
        'side': state.spec.side,
        'step': state.step,
        'attempts': state.attempts,
        'accepts': state.accepts,
        'rng_state': rng_state_hex(state.rng),
    })
    Path(path).write_text(json.dumps(doc))


def load_checkpoint(path: Union[str, Path]) -> ChainState:
    doc = json.loads(Path(path).read_text())
    try:
        spec = TorusSpec(d=int(doc['d']), side=int(doc['side']))
        rng = rng_from_hex(doc['rng_state'])
        state = ChainState(config=WorldlineConfig.from_dict(doc), spec=spec, rng=rng,
                           step=int(doc['step']),
                           attempts={m: int(doc['attempts'][m]) for m in MOVES},
                           accepts={m: int(doc['accepts'][m]) for m in MOVES})
    except (KeyError, TypeError, ValueError) as exc:
        raise ContractViolation(f"corrupted checkpoint {path}: {exc}") from exc
    if state.config.n_sites != spec.n_sites:
        raise ContractViolation(f"checkpoint {path} has {state.config.n_sites} sites for a torus of {spec.n_sites}")
    return state
