#!/usr/bin/env python3
"""
Command line for the transverse-field Ising toolkit

Subcommands: run, sample, ed, verify-irb, verify-di, gauss-dom, scan.
Each one reads a TOML experiment file (every field has a default), writes its
results under the output directory and exits with

    0  every requested check passed
    1  at least one check failed
    2  usage error
    3  invalid configuration or a domain error at runtime
"""
import argparse
import json
import logging
import os
import subprocess
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path
from typing import Callable, Dict, List, Literal, Optional, Sequence, Tuple, Union

import numpy as np
import pandas as pd
from pydantic import BaseModel, ConfigDict, Field, ValidationError, field_validator, model_validator

try:
    import tomllib
except ModuleNotFoundError:  # Python < 3.11
    import tomli as tomllib

from ed_oracle import (MAX_SITES, bubble_exact, chat_table_exact, decompose, export_debug_csv,
                       flip_density_exact, free_site_zeta, schwinger_table_exact,
                       single_site_bubble, susceptibility_exact, susceptibility_via_field)
from errors import ConfigError, ContractViolation, DomainError
from hfunctions import (StepFunction, check_h_derivative, monte_carlo_selector,
                        step_function_from_fractions, symmetrization_sequence, w_prime)
from lattice import TorusSpec
from observables import (EstimatorAccumulator, MeasurementPlan, bubble_estimate, chat_table,
                         choose_j_max, infrared_tail_bound, mean_flip_density, merge_all,
                         schwinger_table, susceptibility_estimate, zeta_estimate, zratio_estimate)
from sampler import SamplerParams, new_chain, run_chain, run_replica
from verify import (BoundReport, ChatData, check_bubble_agreement, check_bubble_bounds,
                    check_bubble_plancherel, check_derivative_bounds, check_diff_inequalities,
                    check_duhamel_bound, check_flip_domination, check_gaussian_domination,
                    check_infrared, check_monotonicity, check_symmetrization_monotone,
                    check_white_limit, check_white_limit_exact, domination_hprimes, print_reports,
                    reports_frame, scan_susceptibility, white_hprimes, white_name)

logger = logging.getLogger(__name__)

EXIT_PASS, EXIT_FAIL, EXIT_USAGE, EXIT_CONFIG = 0, 1, 2, 3

ALL_CHECKS = ('infrared', 'duhamel', 'diff_inequalities', 'derivative_bounds', 'flip_domination',
              'gaussian_domination', 'white_limit', 'white_limit_exact', 'bubble', 'monotonicity',
              'symmetrization')
CheckName = Literal['infrared', 'duhamel', 'diff_inequalities', 'derivative_bounds',
                    'flip_domination', 'gaussian_domination', 'white_limit', 'white_limit_exact',
                    'bubble', 'monotonicity', 'symmetrization']


# Configuration

class ModelConfig(BaseModel):
    model_config = ConfigDict(extra='forbid', populate_by_name=True)

    d: int = 1
    side: int = 4
    beta: float = 1.0
    lam: float = Field(0.5, alias='lambda')
    delta: float = 1.0

    @field_validator('d')
    @classmethod
    def _dimension(cls, v: int) -> int:
        if v < 0:
            raise ValueError("d must be nonnegative")
        return v

    @field_validator('side')
    @classmethod
    def _side(cls, v: int) -> int:
        if v < 2 or v % 2:
            raise ValueError("side must be even and >= 2")
        return v

    @field_validator('beta', 'delta')
    @classmethod
    def _positive(cls, v: float) -> float:
        if not v > 0:
            raise ValueError("must be positive")
        return v

    @field_validator('lam')
    @classmethod
    def _coupling(cls, v: float) -> float:
        if v < 0:
            raise ValueError("lambda must be >= 0")
        return v

    @property
    def n_sites(self) -> int:
        return self.side ** self.d


class SamplerConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    sweeps: int = 20_000
    burn_in: Optional[int] = None
    thinning: int = 1
    pilot_sweeps: int = 2_000
    move_mix: Tuple[float, float, float, float] = (0.1, 0.4, 0.4, 0.1)
    batch_size: int = 100

    @field_validator('sweeps')
    @classmethod
    def _sweeps(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("sweeps must be positive")
        return v

    @field_validator('thinning', 'pilot_sweeps', 'batch_size')
    @classmethod
    def _count(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("must be positive")
        return v

    @field_validator('move_mix')
    @classmethod
    def _mix(cls, v):
        if any(p < 0 for p in v) or abs(sum(v) - 1.0) > 1e-12:
            raise ValueError("move_mix must be four nonnegative probabilities summing to 1")
        if v[1] != v[2]:
            raise ValueError("insert and delete probabilities must be equal")
        return v


class HFunctionConfig(BaseModel):
    """
    A test function h given by its derivative: either the triangle wave
    W′_{r,n} (kind = "white") or a step function with breakpoints given as
    fractions of β (kind = "steps")
    """
    model_config = ConfigDict(extra='forbid')

    name: str
    kind: Literal['white', 'steps'] = 'steps'
    r: float = 1.0
    n: int = 1
    fractions: List[float] = Field(default_factory=list)
    values: List[float] = Field(default_factory=list)
    symmetrize_levels: int = 0

    @model_validator(mode='after')
    def _shape(self) -> "HFunctionConfig":
        if self.kind == 'steps':
            if not self.fractions or len(self.fractions) != len(self.values):
                raise ValueError(f"h function {self.name!r}: fractions and values need equal, nonzero length")
            # the conditions are scale-free in β, so β = 1 decides them
            try:
                check_h_derivative(step_function_from_fractions(1.0, self.fractions, self.values))
            except DomainError as exc:
                raise ValueError(f"h function {self.name!r}: {exc}") from None
        elif self.n < 1:
            raise ValueError(f"h function {self.name!r}: n must be >= 1")
        if self.symmetrize_levels < 0:
            raise ValueError("symmetrize_levels must be nonnegative")
        return self

    def to_hprime(self, beta: float) -> StepFunction:
        if self.kind == 'white':
            return w_prime(self.r, self.n, beta)
        return step_function_from_fractions(beta, self.fractions, self.values)


class ObservableConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    time_grid: int = 64
    j_max: Union[int, Literal['auto']] = 16
    j_max_rel: float = 1e-3
    zeta_r: List[float] = Field(default_factory=lambda: [0.5, 1.0])
    h_functions: List[HFunctionConfig] = Field(default_factory=list)

    @field_validator('time_grid')
    @classmethod
    def _grid(cls, v: int) -> int:
        if v <= 0:
            raise ValueError("time_grid must be positive")
        return v

    @field_validator('j_max')
    @classmethod
    def _j_max(cls, v):
        if v != 'auto' and v < 0:
            raise ValueError("j_max must be nonnegative or 'auto'")
        return v


class VerifyConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    checks: List[CheckName] = Field(default_factory=lambda: list(ALL_CHECKS))
    derivative_step: float = 1e-3
    white_r: List[float] = Field(default_factory=lambda: [0.5, 1.0])
    white_n: List[int] = Field(default_factory=lambda: [1, 2, 3, 4, 5])
    white_exact_n: List[int] = Field(default_factory=lambda: [2, 4, 8, 12, 16])
    white_exact_tol: float = 1e-4
    scan_axis: Literal['lambda', 'delta'] = 'lambda'
    scan_grid: List[float] = Field(default_factory=lambda: [0.0, 0.25, 0.5, 0.75, 1.0, 1.25, 1.5])

    @field_validator('white_n', 'white_exact_n', 'scan_grid')
    @classmethod
    def _ascending(cls, v):
        if any(b <= a for a, b in zip(v, v[1:])):
            raise ValueError("must be strictly ascending")
        return v


class OutputConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    directory: str = 'results'
    plot: bool = False


class ExperimentConfig(BaseModel):
    model_config = ConfigDict(extra='forbid')

    model: ModelConfig = Field(default_factory=ModelConfig)
    sampler: SamplerConfig = Field(default_factory=SamplerConfig)
    observables: ObservableConfig = Field(default_factory=ObservableConfig)
    verify: VerifyConfig = Field(default_factory=VerifyConfig)
    output: OutputConfig = Field(default_factory=OutputConfig)
    seeds: List[int] = Field(default_factory=lambda: [1, 2, 3, 4])
    source: Literal['ed', 'mc'] = 'ed'

    @field_validator('seeds')
    @classmethod
    def _seeds(cls, v: List[int]) -> List[int]:
        if not v:
            raise ValueError("at least one seed is required")
        if len(set(v)) != len(v):
            raise ValueError("seeds must be distinct")
        if any(not 0 <= s < 2 ** 64 for s in v):
            raise ValueError("seeds must fit in 64 bits")
        return v

    @model_validator(mode='after')
    def _ed_size(self) -> "ExperimentConfig":
        if self.source == 'ed' and self.model.n_sites > MAX_SITES:
            raise ValueError(f"source 'ed' needs at most {MAX_SITES} sites, "
                             f"model has {self.model.n_sites}; use source = \"mc\"")
        return self


def _validation_message(exc: ValidationError) -> str:
    return "; ".join(f"{'.'.join(str(p) for p in err['loc']) or 'config'}: {err['msg']}"
                     for err in exc.errors())


def validate_config(data: Dict) -> ExperimentConfig:
    try:
        return ExperimentConfig.model_validate(data)
    except ValidationError as exc:
        raise ConfigError(_validation_message(exc)) from exc


def load_config(path: Optional[Union[str, Path]]) -> ExperimentConfig:
    """Parse and validate a TOML experiment file; None gives the defaults"""
    if path is None:
        return ExperimentConfig()
    try:
        with open(path, 'rb') as f:
            data = tomllib.load(f)
    except OSError as exc:
        raise ConfigError(f"cannot read config {path}: {exc}") from exc
    except tomllib.TOMLDecodeError as exc:
        raise ConfigError(f"config {path} is not valid TOML: {exc}") from exc
    return validate_config(data)


def apply_overrides(config: ExperimentConfig, args: argparse.Namespace) -> ExperimentConfig:
    """Command-line flags win over the file; the result is validated again"""
    data = config.model_dump(by_alias=True)
    if args.seed is not None:
        data['seeds'] = [args.seed + i for i in range(len(config.seeds))]
    if args.out is not None:
        data['output']['directory'] = str(args.out)
    if args.source is not None:
        data['source'] = args.source
    if args.sweeps is not None:
        data['sampler']['sweeps'] = args.sweeps
    if args.plot:
        data['output']['plot'] = True
    return validate_config(data)


# Building blocks

def build_spec(config: ExperimentConfig) -> TorusSpec:
    return TorusSpec(d=config.model.d, side=config.model.side)


def sampler_params(config: ExperimentConfig, seed: int) -> SamplerParams:
    m, s = config.model, config.sampler
    return SamplerParams(lam=m.lam, delta=m.delta, beta=m.beta, move_mix=s.move_mix, seed=seed,
                         sweeps=s.sweeps, burn_in=s.burn_in, thinning=s.thinning,
                         pilot_sweeps=s.pilot_sweeps)


def resolve_j_max(config: ExperimentConfig, spec: TorusSpec) -> int:
    obs, m = config.observables, config.model
    if obs.j_max != 'auto':
        return obs.j_max
    if spec.n_sites <= MAX_SITES:
        reference = bubble_exact(decompose(spec, m.lam, m.delta), spec, m.beta)
    else:
        reference = single_site_bubble(m.beta, m.delta)
    j_max = choose_j_max(spec, m.beta, m.lam, m.delta, reference, obs.j_max_rel)
    logger.info("J_max = %d: tail bound below %.1e of the reference bubble %.4g",
                j_max, obs.j_max_rel, reference)
    return j_max


def _pilot_selector(config: ExperimentConfig, spec: TorusSpec) -> Callable:
    """Pick symmetrization branches on samples from a short pilot chain"""
    params = sampler_params(config, config.seeds[0])
    params.sweeps = config.sampler.pilot_sweeps
    samples = []
    run_chain(new_chain(spec, params), params, lambda cfg: samples.append(cfg.copy()))
    return monte_carlo_selector(samples, config.model.delta)


def symmetrization_names(name: str, levels: int) -> List[str]:
    return [name] + [f'{name}:sym{level}' for level in range(1, levels + 1)]


def build_plan(config: ExperimentConfig, spec: TorusSpec, j_max: int,
               with_h: bool = True) -> MeasurementPlan:
    """Measurement plan with the configured h functions, their parts and the white-noise ladder"""
    m, obs = config.model, config.observables
    hprimes: Dict[str, StepFunction] = {}
    zeta_r = set(obs.zeta_r)
    if with_h:
        selector = None
        for hf in obs.h_functions:
            hprime = hf.to_hprime(m.beta)
            hprimes.update(domination_hprimes(hf.name, hprime))
            zeta_r.add(hprime.sup_norm())
            if hf.symmetrize_levels:
                selector = selector or _pilot_selector(config, spec)
                sequence = symmetrization_sequence(hprime, hf.symmetrize_levels, selector)
                for label, h in zip(symmetrization_names(hf.name, hf.symmetrize_levels)[1:], sequence):
                    hprimes[label] = h
        for r in config.verify.white_r:
            hprimes.update(white_hprimes(m.beta, r, config.verify.white_n))
            zeta_r.add(r)
    return MeasurementPlan(spec=spec, beta=m.beta, lam=m.lam, delta=m.delta,
                           time_grid=obs.time_grid, j_max=j_max, zeta_r=tuple(zeta_r),
                           hprimes=hprimes)


def _replica_worker(job: Tuple[TorusSpec, SamplerParams, MeasurementPlan, int]):
    spec, params, plan, batch_size = job
    return run_replica(spec, params, plan, batch_size)


def max_workers(n_jobs: int) -> int:
    cap = os.environ.get('TFIM_THREADS')
    limit = int(cap) if cap else (os.cpu_count() or 1)
    return max(1, min(n_jobs, limit))


def run_replicas(config: ExperimentConfig, spec: TorusSpec,
                 plan: MeasurementPlan) -> List[Tuple[EstimatorAccumulator, Dict]]:
    """One chain per seed, concurrently up to TFIM_THREADS; results in seed order"""
    jobs = [(spec, sampler_params(config, seed), plan, config.sampler.batch_size)
            for seed in config.seeds]
    workers = max_workers(len(jobs))
    logger.info("running %d chains of %d sweeps on %d worker(s)",
                len(jobs), config.sampler.sweeps, workers)
    if workers == 1:
        return [_replica_worker(job) for job in jobs]
    with ProcessPoolExecutor(max_workers=workers) as pool:
        return list(pool.map(_replica_worker, jobs))


def split_halves(accs: Sequence[EstimatorAccumulator]):
    """Even- and odd-indexed chains merged separately, for replica products"""
    if len(accs) < 2:
        return None
    return merge_all(accs[0::2]), merge_all(accs[1::2])


# Output

def write_json(path: Path, data) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True, default=_jsonable) + '\n')


def _jsonable(obj):
    if isinstance(obj, np.generic):
        return obj.item()
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    raise TypeError(f"cannot serialize {type(obj).__name__}")


def git_hash() -> str:
    try:
        out = subprocess.run(['git', 'rev-parse', 'HEAD'], capture_output=True, text=True,
                             cwd=Path(__file__).resolve().parent, timeout=10)
    except (OSError, subprocess.SubprocessError):
        return 'unknown'
    return out.stdout.strip() if out.returncode == 0 and out.stdout.strip() else 'unknown'


def write_manifest(out: Path, config: ExperimentConfig, command: str) -> None:
    """Everything needed to rerun: the validated config, the seeds and the code revision"""
    write_json(out / 'manifest.json', {
        'command': command,
        'config': config.model_dump(by_alias=True, mode='json'),
        'seeds': config.seeds,
        'git_hash': git_hash(),
        'numpy': np.__version__,
    })


def write_reports(out: Path, reports: Sequence[BoundReport]) -> None:
    write_json(out / 'verify.json', [r.to_dict() for r in reports])
    if reports:
        reports_frame(reports).to_csv(out / 'verify.csv', index=False)


def emit_plot_data(results: Dict, out: Path, plot: bool = False) -> List[Path]:
    """
    Long-format CSVs for external plotting: ĉ against both bounds along l at
    each k, χ along the scan axis, and Z-ratio against the white-noise level n
    """
    written = []
    chat = results.get('chat_frame')
    if chat is not None:
        k_cols = [c for c in chat.columns if c.startswith('k_index_')]
        curve = chat[k_cols + ['j', 'l', 'mean', 'se', 'bound48', 'bound_sharp']].rename(
            columns={'mean': 'chat'})
        path = out / 'plot_bound_curve.csv'
        curve.to_csv(path, index=False)
        written.append(path)
    scan = results.get('scan')
    if scan is not None:
        path = out / f'plot_chi_vs_{scan.columns[0]}.csv'
        scan.to_csv(path, index=False)
        written.append(path)
    white = results.get('white')
    if white is not None:
        path = out / 'plot_zratio_vs_n.csv'
        white.to_csv(path, index=False)
        written.append(path)
    if plot:
        _render_plots(results, out)
    return written


def _render_plots(results: Dict, out: Path) -> None:
    import matplotlib
    matplotlib.use('Agg')
    import matplotlib.pyplot as plt

    chat = results.get('chat_frame')
    if chat is not None:
        k_cols = [c for c in chat.columns if c.startswith('k_index_')]
        fig, ax = plt.subplots(figsize=(8, 5))
        groups = chat.groupby(k_cols) if k_cols else [((), chat)]
        for key, g in groups:
            g = g[g['bound48'] < np.inf]
            if g.empty:
                continue
            line, = ax.plot(g['l'], g['mean'], 'o', ms=3, label=f"k={key}")
            ax.plot(g['l'], g['bound_sharp'], '-', color=line.get_color(), lw=0.8)
        ax.set_yscale('log')
        ax.set_xlabel('l')
        ax.set_ylabel('ĉ(k, l)')
        ax.set_title('ĉ against the sharp infrared bound')
        ax.legend(fontsize=7)
        fig.savefig(out / 'plot_bound_curve.png', dpi=120, bbox_inches='tight')
        plt.close(fig)
    scan = results.get('scan')
    if scan is not None:
        fig, ax = plt.subplots(figsize=(6, 4))
        ax.errorbar(scan.iloc[:, 0], scan['chi'], yerr=scan.get('se'), fmt='o-')
        ax.set_xlabel(scan.columns[0])
        ax.set_ylabel('χ')
        fig.savefig(out / f'plot_chi_vs_{scan.columns[0]}.png', dpi=120, bbox_inches='tight')
        plt.close(fig)
    white = results.get('white')
    if white is not None:
        fig, ax = plt.subplots(figsize=(6, 4))
        for r, g in white.groupby('r'):
            ax.errorbar(g['n'], g['zratio'], yerr=g['se'], fmt='o-', label=f'r={r:g}')
            ax.axhline(g['zeta'].iloc[0], ls='--', lw=0.8)
        ax.set_xlabel('n')
        ax.set_ylabel('Z(W_{r,n})/Z(0)')
        ax.legend()
        fig.savefig(out / 'plot_zratio_vs_n.png', dpi=120, bbox_inches='tight')
        plt.close(fig)


def _pair(value: Tuple[float, float]) -> Dict[str, float]:
    return {'mean': value[0], 'se': value[1]}


SCALAR_KEYS = ('chi', 'bubble', 'zeta', 'flip_density')


def scalar_block(chi: Tuple[float, float], bubble: Tuple[Optional[float], Optional[float], float],
                 zeta: Sequence[Tuple[float, float, float]], flip_density: Tuple[float, float],
                 beta: float, delta: float) -> Dict:
    """The scalars.json record; the flip density carries its domination bound 2βδ"""
    return {
        'chi': _pair(chi),
        'bubble': {'mean': bubble[0], 'se': bubble[1], 'tail': bubble[2]},
        'zeta': [{'r': r, 'mean': mean, 'se': se} for r, mean, se in zeta],
        'flip_density': {'mean': flip_density[0], 'se': flip_density[1], 'bound': 2.0 * beta * delta},
    }


def scalars_document(scalars: Dict, source: str) -> Dict:
    """
    The configured source's chi, bubble, zeta and flip_density at the top
    level; every computed block in full under 'exact' and 'sampled'
    """
    primary = source if source in scalars else next(iter(scalars))
    doc = {key: scalars[primary][key] for key in SCALAR_KEYS}
    doc['source'] = primary
    for name, key in (('exact', 'ed'), ('sampled', 'mc')):
        if key in scalars:
            doc[name] = scalars[key]
    return doc


# Pipelines

def ed_pipeline(config: ExperimentConfig, spec: TorusSpec, out: Path, results: Dict) -> List[BoundReport]:
    """Exact tables and the exact checks"""
    m, checks = config.model, config.verify.checks
    j_max = resolve_j_max(config, spec)
    decomp = decompose(spec, m.lam, m.delta)
    chi = susceptibility_exact(decomp, spec, m.beta)
    B = bubble_exact(decomp, spec, m.beta)
    # ζ has a closed form only for decoupled sites
    zeta = ([(r, free_site_zeta(r, m.beta, m.delta) ** spec.n_sites, 0.0)
             for r in sorted(set(config.observables.zeta_r))] if m.lam == 0.0 else [])
    block = scalar_block((chi, 0.0), (B, 0.0, 0.0), zeta, (flip_density_exact(decomp, m.beta), 0.0),
                         m.beta, m.delta)
    block.update({
        'chi_via_field': susceptibility_via_field(spec, m.beta, m.lam, m.delta),
        'j_max': j_max,
    })
    results['scalars']['ed'] = block
    results['ed_bubble'] = B
    chat = chat_table_exact(decomp, spec, m.beta, j_max)
    chat.to_csv(out / 'chat.csv', index=False)
    schwinger_table_exact(decomp, m.beta, config.observables.time_grid).to_csv(
        out / 'schwinger.csv', index=False)
    export_debug_csv(decomp, m.beta, out / 'ed_debug', config.observables.time_grid)
    results['chat_frame'] = chat

    reports = []
    if 'infrared' in checks or 'duhamel' in checks:
        data = ChatData.from_exact(decomp, m.beta, j_max)
        if 'infrared' in checks:
            reports.append(check_infrared(data))
        if 'duhamel' in checks:
            reports.append(check_duhamel_bound(data))
    if 'bubble' in checks:
        reports.append(check_bubble_plancherel(decomp, m.beta, j_max))
        reports.append(check_bubble_bounds(spec, m.beta, m.lam, m.delta, chi, B))
    return reports


def mc_pipeline(config: ExperimentConfig, spec: TorusSpec, out: Path, results: Dict,
                write_tables: bool = True) -> List[BoundReport]:
    """Sample every seed, merge, tabulate and run the statistical checks"""
    m, checks = config.model, config.verify.checks
    j_max = resolve_j_max(config, spec)
    plan = build_plan(config, spec, j_max)
    replicas = run_replicas(config, spec, plan)
    accs = [acc for acc, _ in replicas]
    acc = merge_all(accs)

    chi = susceptibility_estimate(acc, plan)
    halves = split_halves(accs)
    if halves is not None:
        bubble = bubble_estimate(halves[0], halves[1], plan)
    else:
        logger.warning("one chain only: the replica-product bubble needs two independent halves")
        bubble = (None, None, infrared_tail_bound(spec, m.beta, m.lam, m.delta, j_max))
    zeta = [(r,) + zeta_estimate(acc, plan, r) for r in plan.zeta_r]
    scalars = scalar_block(chi, bubble, zeta, mean_flip_density(acc, plan), m.beta, m.delta)
    scalars.update({
        'energy': _pair((float(acc.mean('energy')), float(acc.se('energy')))),
        'zratio': {name: _pair(zratio_estimate(acc, plan, name)) for name in plan.hprimes},
        'j_max': j_max,
        'chains': [{k: info[k] for k in ('seed', 'burn_in', 'tau_int', 'samples', 'acceptance')}
                   for _, info in replicas],
    })
    results['scalars']['mc'] = scalars

    if write_tables:
        chat = chat_table(acc, plan)
        chat.to_csv(out / 'chat.csv', index=False)
        schwinger_table(acc, plan).to_csv(out / 'schwinger.csv', index=False)
        results['chat_frame'] = chat

    reports = []
    data = ChatData.from_accumulator(acc, plan)
    if 'infrared' in checks:
        reports.append(check_infrared(data))
    if 'duhamel' in checks:
        reports.append(check_duhamel_bound(data))
    if 'flip_domination' in checks:
        reports.append(check_flip_domination(acc, plan))
    if 'gaussian_domination' in checks:
        for hf in config.observables.h_functions:
            reports.append(check_gaussian_domination(acc, plan, hf.name))
    if 'white_limit' in checks:
        rows = []
        for r in config.verify.white_r:
            reports.append(check_white_limit(acc, plan, r, config.verify.white_n))
            zeta = zeta_estimate(acc, plan, r)[0]
            for n in config.verify.white_n:
                z, se = zratio_estimate(acc, plan, white_name(r, n))
                rows.append({'r': r, 'n': n, 'zratio': z, 'se': se, 'zeta': zeta})
        results['white'] = pd.DataFrame(rows, columns=['r', 'n', 'zratio', 'se', 'zeta'])
    if 'symmetrization' in checks:
        for hf in config.observables.h_functions:
            if hf.symmetrize_levels:
                names = symmetrization_names(hf.name, hf.symmetrize_levels)
                reports.append(check_symmetrization_monotone(acc, plan, names))
    if 'bubble' in checks and halves is not None:
        b = scalars['bubble']
        reports.append(check_bubble_bounds(spec, m.beta, m.lam, m.delta, chi[0], b['mean'],
                                           chi_se=chi[1], bubble_se=b['se']))
        if 'ed_bubble' in results:
            reports.append(check_bubble_agreement((b['mean'], b['se'], b['tail']),
                                                  results['ed_bubble']))
    return reports


def derivative_reports(config: ExperimentConfig, spec: TorusSpec) -> List[BoundReport]:
    m, v = config.model, config.verify
    if spec.n_sites > MAX_SITES:
        raise DomainError(f"derivative checks need exact diagonalization (at most {MAX_SITES} sites)")
    reports = []
    if 'diff_inequalities' in v.checks:
        reports.append(check_diff_inequalities(spec, m.beta, m.lam, m.delta, v.derivative_step))
    if 'derivative_bounds' in v.checks:
        reports.append(check_derivative_bounds(spec, m.beta, m.lam, m.delta, v.derivative_step))
    return reports


def scan_reports(config: ExperimentConfig, spec: TorusSpec, out: Path, results: Dict) -> List[BoundReport]:
    m, v = config.model, config.verify
    fixed = m.delta if v.scan_axis == 'lambda' else m.lam
    options = {'move_mix': config.sampler.move_mix, 'seed': config.seeds[0],
               'sweeps': config.sampler.sweeps, 'burn_in': config.sampler.burn_in,
               'thinning': config.sampler.thinning, 'pilot_sweeps': config.sampler.pilot_sweeps}
    table = scan_susceptibility(spec, m.beta, v.scan_grid, fixed, axis=v.scan_axis,
                                source=config.source, sampler_options=options)
    columns = [v.scan_axis, 'chi'] if config.source == 'ed' else [v.scan_axis, 'chi', 'se']
    table[columns].to_csv(out / 'scan.csv', index=False)
    results['scan'] = table[columns]
    params = {'d': spec.d, 'side': spec.side, 'beta': m.beta,
              ('delta' if v.scan_axis == 'lambda' else 'lambda'): fixed}
    return [check_monotonicity(table, v.scan_axis, params)]


def white_exact_reports(config: ExperimentConfig) -> List[BoundReport]:
    m, v = config.model, config.verify
    return [check_white_limit_exact(m.beta, m.delta, r, v.white_exact_n, v.white_exact_tol)
            for r in v.white_r]


def _with_checks(config: ExperimentConfig, checks: Sequence[str]) -> ExperimentConfig:
    wanted = list(checks)
    return config.model_copy(update={'verify': config.verify.model_copy(update={'checks': wanted})})


def cmd_run(config, spec, out, results) -> List[BoundReport]:
    checks = config.verify.checks
    reports = []
    if spec.n_sites <= MAX_SITES:
        reports += ed_pipeline(config, spec, out, results)
        reports += derivative_reports(config, spec)
    else:
        logger.info("%d sites exceed the exact-diagonalization cap; Monte Carlo only", spec.n_sites)
    reports += mc_pipeline(config, spec, out, results, write_tables=spec.n_sites > MAX_SITES)
    if 'white_limit_exact' in checks:
        reports += white_exact_reports(config)
    if 'monotonicity' in checks:
        reports += scan_reports(config, spec, out, results)
    return reports


def cmd_sample(config, spec, out, results) -> List[BoundReport]:
    return mc_pipeline(_with_checks(config, ()), spec, out, results)


def cmd_ed(config, spec, out, results) -> List[BoundReport]:
    if spec.n_sites > MAX_SITES:
        raise DomainError(f"exact diagonalization is capped at {MAX_SITES} sites")
    return ed_pipeline(_with_checks(config, ()), spec, out, results)


def cmd_verify_irb(config, spec, out, results) -> List[BoundReport]:
    config = _with_checks(config, ('infrared', 'duhamel'))
    if config.source == 'ed':
        return ed_pipeline(config, spec, out, results)
    return mc_pipeline(config, spec, out, results)


def cmd_verify_di(config, spec, out, results) -> List[BoundReport]:
    config = _with_checks(config, ('diff_inequalities', 'derivative_bounds'))
    return derivative_reports(config, spec)


def cmd_gauss_dom(config, spec, out, results) -> List[BoundReport]:
    config = _with_checks(config, ('gaussian_domination', 'white_limit', 'symmetrization'))
    reports = mc_pipeline(config, spec, out, results, write_tables=False)
    return reports + white_exact_reports(config)


def cmd_scan(config, spec, out, results) -> List[BoundReport]:
    return scan_reports(config, spec, out, results)


COMMANDS: Dict[str, Callable] = {
    'run': cmd_run,
    'sample': cmd_sample,
    'ed': cmd_ed,
    'verify-irb': cmd_verify_irb,
    'verify-di': cmd_verify_di,
    'gauss-dom': cmd_gauss_dom,
    'scan': cmd_scan,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog='tfim',
        description='Worldline Monte Carlo, exact diagonalization and bound checks '
                    'for the transverse-field Ising model on a torus')
    sub = parser.add_subparsers(dest='command', required=True)
    helps = {
        'run': 'full experiment: exact and sampled estimates, all configured checks, plot data',
        'sample': 'run the seeded chains and write the estimates',
        'ed': 'exact diagonalization tables',
        'verify-irb': 'infrared and Duhamel bounds',
        'verify-di': 'differential inequalities and derivative bounds (exact)',
        'gauss-dom': 'Gaussian domination and the white-noise limit',
        'scan': 'susceptibility along a lambda or delta grid',
    }
    for name, text in helps.items():
        p = sub.add_parser(name, help=text)
        p.add_argument('--config', type=Path, default=None, help='TOML experiment file')
        p.add_argument('--seed', type=int, default=None, help='base seed (overrides the seed list)')
        p.add_argument('--out', type=Path, default=None, help='output directory')
        p.add_argument('--sweeps', type=int, default=None, help='sweeps per chain')
        group = p.add_mutually_exclusive_group()
        group.add_argument('--mc', dest='source', action='store_const', const='mc',
                           help='use Monte Carlo estimates')
        group.add_argument('--ed', dest='source', action='store_const', const='ed',
                           help='use exact diagonalization')
        p.add_argument('--plot', action='store_true', help='render PNGs next to the plot data')
        p.add_argument('--log-level', default='INFO',
                       choices=['DEBUG', 'INFO', 'WARNING', 'ERROR'])
    return parser


def setup_logging(out: Path, level: str) -> None:
    logging.basicConfig(
        level=getattr(logging, level),
        format="%(asctime)s - %(levelname)s - %(message)s",
        handlers=[logging.StreamHandler(sys.stdout), logging.FileHandler(out / 'run.log')],
        force=True,
    )


def print_scalars(scalars: Dict) -> None:
    print("=" * 60)
    print("ESTIMATES")
    print("=" * 60)
    ed = scalars.get('ed')
    if ed:
        print(f"exact  chi = {ed['chi']['mean']:.10g}   B = {ed['bubble']['mean']:.10g}")
    mc = scalars.get('mc')
    if mc:
        print(f"MC     chi = {mc['chi']['mean']:.6g} ± {mc['chi']['se']:.2g}")
        b = mc['bubble']
        if b['mean'] is not None:
            print(f"MC     B   = {b['mean']:.6g} ± {b['se']:.2g} (tail ≤ {b['tail']:.2g})")
        fd = mc['flip_density']
        print(f"MC     |D|/|Λ| = {fd['mean']:.6g} ± {fd['se']:.2g} (bound {fd['bound']:g})")


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        config = apply_overrides(load_config(args.config), args)
    except ConfigError as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG

    out = Path(config.output.directory)
    out.mkdir(parents=True, exist_ok=True)
    setup_logging(out, args.log_level)
    logger.info("%s: d=%d side=%d beta=%g lambda=%g delta=%g source=%s seeds=%s",
                args.command, config.model.d, config.model.side, config.model.beta,
                config.model.lam, config.model.delta, config.source, config.seeds)
    write_manifest(out, config, args.command)

    results: Dict = {'scalars': {}}
    try:
        spec = build_spec(config)
        reports = COMMANDS[args.command](config, spec, out, results)
    except (DomainError, ContractViolation, ConfigError) as exc:
        logger.error("%s: %s", type(exc).__name__, exc)
        return EXIT_CONFIG

    if results['scalars']:
        write_json(out / 'scalars.json', scalars_document(results['scalars'], config.source))
        print_scalars(results['scalars'])
    if reports or args.command in ('run', 'verify-irb', 'verify-di', 'gauss-dom', 'scan'):
        write_reports(out, reports)
    emit_plot_data(results, out, config.output.plot)
    if reports:
        print_reports(reports)
    return EXIT_PASS if all(r.passed for r in reports) else EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
