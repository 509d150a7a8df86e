"""
Finite-volume checks of the inequalities satisfied by the quantum Ising model

Every check returns a BoundReport. Exact checks (ED input) pass when the
worst margin is ≥ −1e−9; statistical checks (Monte Carlo input) pass when
every margin is ≥ −4·SE at its own point.
"""
import logging
import math
from dataclasses import asdict, dataclass, field
from typing import Dict, Iterable, List, Optional, Sequence

import numpy as np
import pandas as pd
from scipy import stats
from tqdm import tqdm

from ed_oracle import (bubble_exact, chat_exact_grid, chi_partials, decompose, even_poisson_pmf,
                       free_site_zeta, free_site_zratio, inverse_chi_partials, susceptibility_exact,
                       SpectralDecomposition)
from errors import ContractViolation, DomainError
from hfunctions import StepFunction, minus_part, plus_part, w_prime
from lattice import TorusSpec, lhat, momentum_grid
from observables import (EstimatorAccumulator, MeasurementPlan, bubble_ir_upper_bound,
                         infrared_bound, infrared_bound_sharp, infrared_denominator,
                         infrared_tail_bound, mean_flip_density, susceptibility_estimate,
                         zeta_estimate, zratio_estimate)
from sampler import SamplerParams, run_replica

logger = logging.getLogger(__name__)

EXACT_TOL = 1e-9
N_SE = 4.0
DERIVATIVE_REL_TOL = 1e-6


@dataclass
class BoundReport:
    """
    Outcome of one check

    margin is (bound − value) at the worst point, location names that point,
    and passed ⇔ margin ≥ −tolerance. details carries per-part summaries when
    a check combines several inequalities.
    """
    check: str
    params: Dict[str, float]
    margin: float
    location: Optional[str]
    passed: bool
    tolerance: float
    statistical: bool
    details: Dict = field(default_factory=dict)
    excluded: List[str] = field(default_factory=list)

    def summary(self) -> Dict:
        return {'margin': _finite_or_none(self.margin), 'location': self.location,
                'passed': self.passed, 'tolerance': self.tolerance}

    def to_dict(self) -> Dict:
        out = asdict(self)
        out['margin'] = _finite_or_none(self.margin)
        return out


def _finite_or_none(x: float) -> Optional[float]:
    return float(x) if math.isfinite(x) else None


def model_params(spec: TorusSpec, beta: float, lam: float, delta: float) -> Dict[str, float]:
    return {'d': spec.d, 'side': spec.side, 'beta': beta, 'lambda': lam, 'delta': delta}


def _worst(check: str, params: Dict[str, float], margins, tolerances, locations: Sequence[str],
           statistical: bool, details: Optional[Dict] = None,
           excluded: Iterable[str] = ()) -> BoundReport:
    """Report the point with the least slack margin + tolerance"""
    margins = np.asarray(margins, dtype=float).ravel()
    tolerances = np.broadcast_to(np.asarray(tolerances, dtype=float), margins.shape).ravel()
    if margins.size == 0:
        return BoundReport(check=check, params=params, margin=math.inf, location=None, passed=True,
                           tolerance=0.0, statistical=statistical, details=details or {},
                           excluded=list(excluded))
    slack = margins + tolerances
    i = int(np.argmin(slack))
    return BoundReport(check=check, params=params, margin=float(margins[i]), location=locations[i],
                       passed=bool(slack[i] >= 0.0), tolerance=float(tolerances[i]),
                       statistical=statistical, details=details or {}, excluded=list(excluded))


def _combine(check: str, parts: Dict[str, BoundReport]) -> BoundReport:
    """One report whose headline is the worst of its parts"""
    first = next(iter(parts.values()))
    worst = min(parts.values(), key=lambda r: r.margin + r.tolerance)
    excluded = sorted({e for r in parts.values() for e in r.excluded})
    return BoundReport(check=check, params=first.params, margin=worst.margin,
                       location=worst.location, passed=all(r.passed for r in parts.values()),
                       tolerance=worst.tolerance,
                       statistical=any(r.statistical for r in parts.values()),
                       details={name: r.summary() for name, r in parts.items()}, excluded=excluded)


@dataclass
class ChatData:
    """ĉ(k,l) on the grid k ∈ Λ*, j = −J..J, exact (se is None) or estimated"""
    spec: TorusSpec
    beta: float
    lam: float
    delta: float
    j_max: int
    mean: np.ndarray
    se: Optional[np.ndarray] = None

    @classmethod
    def from_exact(cls, decomp: SpectralDecomposition, beta: float, j_max: int) -> "ChatData":
        mean = chat_exact_grid(decomp, decomp.spec, beta, j_max)
        return cls(decomp.spec, beta, decomp.lam, decomp.delta, j_max, mean)

    @classmethod
    def from_accumulator(cls, acc: EstimatorAccumulator, plan: MeasurementPlan) -> "ChatData":
        return cls(plan.spec, plan.beta, plan.lam, plan.delta, plan.j_max,
                   acc.mean('chat'), acc.se('chat'))

    @property
    def statistical(self) -> bool:
        return self.se is not None

    @property
    def params(self) -> Dict[str, float]:
        return model_params(self.spec, self.beta, self.lam, self.delta)

    def grid(self):
        """(L̂ column, l row) broadcastable against mean"""
        lh = np.array([lhat(k) for k in momentum_grid(self.spec)])[:, None]
        l = (2.0 * math.pi * np.arange(-self.j_max, self.j_max + 1) / self.beta)[None, :]
        return lh, l

    def tolerance(self) -> np.ndarray:
        if self.se is None:
            return np.full(self.mean.shape, EXACT_TOL)
        return N_SE * np.asarray(self.se)

    def location(self, kp: int, jp: int) -> str:
        return f"k={momentum_grid(self.spec)[kp].index}, j={jp - self.j_max}"


def _bound_report(check: str, data: ChatData, bound: np.ndarray, mask: np.ndarray) -> BoundReport:
    kp, jp = np.nonzero(mask)
    ex_k, ex_j = np.nonzero(~mask)
    margins = (bound - data.mean)[mask]
    return _worst(check, data.params, margins, data.tolerance()[mask],
                  [data.location(a, b) for a, b in zip(kp, jp)], data.statistical,
                  excluded=[data.location(a, b) for a, b in zip(ex_k, ex_j)])


def check_infrared(data: ChatData) -> BoundReport:
    """
    ĉ(k,l) ≤ 48/(2λL̂ + l²/2δ) and the sharper (2λL̂ + 48l²/2δ)/(2λL̂ + l²/2δ)²

    Points where the denominator vanishes ((0,0), and every l = 0 point when
    λ = 0) are excluded and listed.
    """
    lh, l = data.grid()
    den = infrared_denominator(lh, l, data.lam, data.delta) * np.ones_like(data.mean)
    mask = den > 0.0
    loose = _bound_report('infrared_48', data, infrared_bound(lh, l, data.lam, data.delta), mask)
    sharp = _bound_report('infrared_sharp', data, infrared_bound_sharp(lh, l, data.lam, data.delta), mask)
    if sharp.passed and not loose.passed:
        raise ContractViolation(
            f"sharp infrared bound passes but the 48-bound fails at {loose.location}")
    return _combine('infrared', {'bound48': loose, 'sharp': sharp})


def check_duhamel_bound(data: ChatData) -> BoundReport:
    """ĉ(k,0) ≤ 1/(2λL̂(k)) for k ≠ 0"""
    lh, _ = data.grid()
    lh = lh * np.ones_like(data.mean)
    column = np.zeros(data.mean.shape, dtype=bool)
    column[:, data.j_max] = True
    den = 2.0 * data.lam * lh
    bound = np.where(den > 0, 1.0 / np.where(den > 0, den, 1.0), np.inf)
    mask = column & (den > 0)
    report = _bound_report('duhamel', data, bound, mask)
    report.excluded = [e for e in report.excluded if e.endswith(', j=0')]
    return report


def check_flip_domination(acc: EstimatorAccumulator, plan: MeasurementPlan) -> BoundReport:
    """μ|D₀| ≤ 2βδ: the flip process is dominated by a rate-2δ Poisson process"""
    mean, se = mean_flip_density(acc, plan)
    bound = 2.0 * plan.beta * plan.delta
    report = _worst('flip_domination', model_params(plan.spec, plan.beta, plan.lam, plan.delta),
                    [bound - mean], [N_SE * se], ['x=0'], statistical=True)
    report.details = {'mean': mean, 'se': se, 'bound': bound}
    return report


def check_free_flip_law(counts: Sequence[int], beta: float, delta: float,
                        p_min: float = 1e-3) -> BoundReport:
    """
    Chi-square test of per-site flip counts against the even-conditioned
    Poisson law P(2k) = (δβ)^{2k}/((2k)!cosh(δβ)), valid at λ = 0

    Tail bins with expected count below 5 are pooled.
    """
    counts = np.asarray(counts, dtype=int)
    if counts.size == 0:
        raise DomainError("no flip counts to test")
    if np.any(counts % 2):
        raise ContractViolation("odd flip count in a periodic configuration")
    m = delta * beta
    top = int(counts.max()) // 2
    probs = np.array([even_poisson_pmf(2 * k, m) for k in range(top + 1)])
    probs[-1] += max(0.0, 1.0 - probs.sum())
    observed = np.bincount(counts // 2, minlength=top + 1).astype(float)
    expected = probs * counts.size
    obs_bins, exp_bins = [], []
    o_acc = e_acc = 0.0
    for o, e in zip(observed, expected):
        o_acc += o
        e_acc += e
        if e_acc >= 5.0:
            obs_bins.append(o_acc)
            exp_bins.append(e_acc)
            o_acc = e_acc = 0.0
    if exp_bins:
        obs_bins[-1] += o_acc
        exp_bins[-1] += e_acc
    else:
        obs_bins, exp_bins = [o_acc], [e_acc]
    if len(exp_bins) < 2:
        p_value = 1.0
        chi2 = 0.0
    else:
        exp_arr = np.asarray(exp_bins) * (sum(obs_bins) / sum(exp_bins))
        chi2, p_value = stats.chisquare(obs_bins, exp_arr)
    params = {'d': 0, 'side': 2, 'beta': beta, 'lambda': 0.0, 'delta': delta}
    report = _worst('free_flip_law', params, [p_value - p_min], [0.0], ['histogram'], statistical=True)
    report.details = {'chi2': float(chi2), 'p_value': float(p_value), 'bins': len(exp_bins),
                      'mean': float(counts.mean()), 'expected_mean': m * math.tanh(m)}
    return report


def domination_hprimes(name: str, hprime: StepFunction) -> Dict[str, StepFunction]:
    """h′ together with its + and − parts, named for a MeasurementPlan"""
    return {name: hprime, f'{name}+': plus_part(hprime), f'{name}-': minus_part(hprime)}


def check_gaussian_domination(acc: EstimatorAccumulator, plan: MeasurementPlan, name: str) -> BoundReport:
    """
    Z(h) ≤ ζ(‖h′‖∞)Z(0) and Z(h) ≤ max{Z(h₊), Z(h₋)}

    The plan must record h′ under name, its parts under name+ and name−
    (see domination_hprimes), and ζ at ‖h′‖∞.
    """
    params = model_params(plan.spec, plan.beta, plan.lam, plan.delta)
    hprime = plan.hprimes[name]
    z, z_se = zratio_estimate(acc, plan, name)
    zeta, zeta_se = zeta_estimate(acc, plan, hprime.sup_norm())
    temporal = _worst('temporal', params, [zeta - z], [N_SE * math.hypot(z_se, zeta_se)],
                      [name], statistical=True)
    zp, zp_se = zratio_estimate(acc, plan, f'{name}+')
    zm, zm_se = zratio_estimate(acc, plan, f'{name}-')
    best, best_se = (zp, zp_se) if zp >= zm else (zm, zm_se)
    vertical = _worst('plus_minus', params, [best - z], [N_SE * math.hypot(z_se, best_se)],
                      [name], statistical=True)
    report = _combine(f'gaussian_domination:{name}', {'temporal': temporal, 'plus_minus': vertical})
    report.details.update({'zratio': z, 'zratio_se': z_se, 'zeta': zeta, 'zeta_se': zeta_se,
                           'zratio_plus': zp, 'zratio_minus': zm})
    return report


def white_name(r: float, n: int) -> str:
    return f'W_{r:g}_{n}'


def white_hprimes(beta: float, r: float, n_list: Sequence[int]) -> Dict[str, StepFunction]:
    return {white_name(r, n): w_prime(r, n, beta) for n in n_list}


def _check_ascending(n_list: Sequence[int]) -> List[int]:
    n_list = list(n_list)
    if not n_list or any(b <= a for a, b in zip(n_list, n_list[1:])):
        raise DomainError(f"n_list must be nonempty and ascending, got {n_list}")
    return n_list


def check_white_limit(acc: EstimatorAccumulator, plan: MeasurementPlan, r: float,
                      n_list: Sequence[int]) -> BoundReport:
    """
    Z(W_{r,n})/Z(0) → ζ(r): |zratio − ζ̂(r)| per n, judged at the largest n
    """
    n_list = _check_ascending(n_list)
    zeta, zeta_se = zeta_estimate(acc, plan, r)
    gaps = {}
    for n in n_list:
        z, z_se = zratio_estimate(acc, plan, white_name(r, n))
        gaps[n] = (abs(z - zeta), math.hypot(z_se, zeta_se))
    gap, se = gaps[n_list[-1]]
    report = _worst(f'white_limit:r={r:g}', model_params(plan.spec, plan.beta, plan.lam, plan.delta),
                    [-gap], [N_SE * se], [f'n={n_list[-1]}'], statistical=True)
    report.details = {f'n={n}': {'gap': g, 'se': s} for n, (g, s) in gaps.items()}
    return report


def check_white_limit_exact(beta: float, delta: float, r: float, n_list: Sequence[int],
                            tol: float = 1e-4) -> BoundReport:
    """The same limit for one free site, against the exact transfer-matrix ratio"""
    n_list = _check_ascending(n_list)
    zeta = free_site_zeta(r, beta, delta)
    gaps = {n: abs(free_site_zratio(w_prime(r, n, beta), delta) - zeta) for n in n_list}
    params = {'d': 0, 'side': 2, 'beta': beta, 'lambda': 0.0, 'delta': delta}
    report = _worst(f'white_limit_exact:r={r:g}', params, [-gaps[n_list[-1]]], [tol],
                    [f'n={n_list[-1]}'], statistical=False)
    report.details = {f'n={n}': g for n, g in gaps.items()}
    return report


def _chain_tolerance(coeff_errs: Sequence[float], scale_terms: Sequence[float]) -> float:
    return sum(coeff_errs) + DERIVATIVE_REL_TOL * max(abs(t) for t in scale_terms)


def check_diff_inequalities(spec: TorusSpec, beta: float, lam: float, delta: float,
                            step: float = 1e-3) -> BoundReport:
    """
    4dχ² ≥ ∂χ/∂λ ≥ 4dχ² − 4dBχ − 2dλB·∂χ/∂λ − 8dδB·(−∂χ/∂δ)
    2χ² ≥ −∂χ/∂δ ≥ 2χ² − 2Bχ − λB·∂χ/∂λ − 4δB·(−∂χ/∂δ)

    χ and B are exact; derivatives come from chi_partials and their Richardson
    error estimates propagate into each chain's tolerance.
    """
    d = spec.d
    decomp = decompose(spec, lam, delta)
    chi = susceptibility_exact(decomp, spec, beta)
    B = bubble_exact(decomp, spec, beta)
    p = chi_partials(spec, beta, lam, delta, step)
    dl, md = p.dchi_dlambda, -p.dchi_ddelta
    el, ed = p.err_lambda, p.err_delta
    params = model_params(spec, beta, lam, delta)

    def part(name, margin, tol):
        return _worst(name, params, [margin], [tol], [name], statistical=False)

    lower1 = 4 * d * chi ** 2 - 4 * d * B * chi - 2 * d * lam * B * dl - 8 * d * delta * B * md
    lower2 = 2 * chi ** 2 - 2 * B * chi - lam * B * dl - 4 * delta * B * md
    parts = {
        'di1_upper': part('di1_upper', 4 * d * chi ** 2 - dl,
                          _chain_tolerance([el], [4 * d * chi ** 2, dl])),
        'di1_lower': part('di1_lower', dl - lower1,
                          _chain_tolerance([el * (1 + 2 * d * lam * B), ed * 8 * d * delta * B],
                                           [dl, lower1, 4 * d * chi ** 2])),
        'di2_upper': part('di2_upper', 2 * chi ** 2 - md,
                          _chain_tolerance([ed], [2 * chi ** 2, md])),
        'di2_lower': part('di2_lower', md - lower2,
                          _chain_tolerance([el * lam * B, ed * (1 + 4 * delta * B)],
                                           [md, lower2, 2 * chi ** 2])),
        'dchi_dlambda_sign': part('dchi_dlambda_sign', dl, _chain_tolerance([el], [dl, chi])),
        'dchi_ddelta_sign': part('dchi_ddelta_sign', md, _chain_tolerance([ed], [md, chi])),
    }
    report = _combine('diff_inequalities', parts)
    report.details.update({'chi': chi, 'bubble': B, 'dchi_dlambda': p.dchi_dlambda,
                           'dchi_ddelta': p.dchi_ddelta, 'err_lambda': el, 'err_delta': ed})
    return report


def check_derivative_bounds(spec: TorusSpec, beta: float, lam: float, delta: float,
                            step: float = 1e-3) -> BoundReport:
    """−∂(χ⁻¹)/∂λ ≤ 4d and ∂(χ⁻¹)/∂δ ≤ 2"""
    p = inverse_chi_partials(spec, beta, lam, delta, step)
    params = model_params(spec, beta, lam, delta)
    d = spec.d
    lam_part = _worst('inverse_lambda', params, [4 * d + p.dchi_dlambda],
                      [p.err_lambda + DERIVATIVE_REL_TOL * max(abs(p.dchi_dlambda), 4 * d)],
                      ['inverse_lambda'], statistical=False)
    delta_part = _worst('inverse_delta', params, [2.0 - p.dchi_ddelta],
                        [p.err_delta + DERIVATIVE_REL_TOL * max(abs(p.dchi_ddelta), 2.0)],
                        ['inverse_delta'], statistical=False)
    report = _combine('derivative_bounds', {'inverse_lambda': lam_part, 'inverse_delta': delta_part})
    report.details.update({'inverse_chi': p.chi, 'dinv_dlambda': p.dchi_dlambda,
                           'dinv_ddelta': p.dchi_ddelta})
    return report


def scan_susceptibility(spec: TorusSpec, beta: float, grid: Sequence[float], fixed: float,
                        axis: str = 'lambda', source: str = 'ed',
                        sampler_options: Optional[Dict] = None, progress: bool = False) -> pd.DataFrame:
    """
    χ along a sorted λ grid at fixed δ (axis='lambda') or along δ at fixed λ

    ED gives exact values (se = 0); MC runs one chain per grid point with the
    given sampler options.
    """
    if axis not in ('lambda', 'delta'):
        raise DomainError(f"axis must be 'lambda' or 'delta', got {axis!r}")
    if source not in ('ed', 'mc'):
        raise DomainError(f"source must be 'ed' or 'mc', got {source!r}")
    grid = [float(v) for v in grid]
    if any(b < a for a, b in zip(grid, grid[1:])):
        raise DomainError("scan grid must be sorted")
    rows = []
    for value in tqdm(grid, disable=not progress, desc=f"scan {axis}"):
        lam, delta = (value, fixed) if axis == 'lambda' else (fixed, value)
        if source == 'ed':
            chi, se = susceptibility_exact(decompose(spec, lam, delta), spec, beta), 0.0
        else:
            plan = MeasurementPlan(spec=spec, beta=beta, lam=lam, delta=delta, time_grid=8, j_max=0)
            params = SamplerParams(lam=lam, delta=delta, beta=beta, **(sampler_options or {}))
            acc, _ = run_replica(spec, params, plan)
            chi, se = susceptibility_estimate(acc, plan)
        logger.info("%s=%.4g: chi=%.6g (se %.2g)", axis, value, chi, se)
        rows.append({axis: value, 'chi': chi, 'se': se})
    return pd.DataFrame(rows, columns=[axis, 'chi', 'se'])


def check_monotonicity(table: pd.DataFrame, axis: str = 'lambda',
                       params: Optional[Dict[str, float]] = None) -> BoundReport:
    """χ nondecreasing in λ, nonincreasing in δ, along a scan table"""
    if axis not in ('lambda', 'delta'):
        raise DomainError(f"axis must be 'lambda' or 'delta', got {axis!r}")
    chi = table['chi'].to_numpy(dtype=float)
    se = table['se'].to_numpy(dtype=float) if 'se' in table else np.zeros_like(chi)
    steps = np.diff(chi) if axis == 'lambda' else -np.diff(chi)
    statistical = bool(np.any(se > 0))
    tol = N_SE * np.hypot(se[1:], se[:-1]) if statistical else EXACT_TOL
    values = table[axis].to_numpy(dtype=float)
    locations = [f'{axis}={a:g}..{b:g}' for a, b in zip(values, values[1:])]
    return _worst(f'monotone_{axis}', params or {}, steps, tol, locations, statistical)


def check_bubble_plancherel(decomp: SpectralDecomposition, beta: float, j_max: int) -> BoundReport:
    """
    Direct B = Σ_x∫c² against (1/(β|Λ|))Σ_{k,|j|≤J}ĉ², within the tail bound + 1e−8
    """
    spec = decomp.spec
    direct = bubble_exact(decomp, spec, beta)
    chat = chat_exact_grid(decomp, spec, beta, j_max)
    fourier = float(np.sum(chat ** 2)) / (beta * spec.n_sites)
    tail = infrared_tail_bound(spec, beta, decomp.lam, decomp.delta, j_max)
    report = _worst('bubble_plancherel', model_params(spec, beta, decomp.lam, decomp.delta),
                    [tail + 1e-8 - abs(direct - fourier)], [EXACT_TOL], [f'J={j_max}'],
                    statistical=False)
    report.details = {'direct': direct, 'fourier': fourier, 'tail_bound': tail}
    return report


def check_bubble_bounds(spec: TorusSpec, beta: float, lam: float, delta: float,
                        chi: float, bubble: float, chi_se: float = 0.0,
                        bubble_se: float = 0.0) -> BoundReport:
    """B ≤ χ and B ≤ (1/(β|Λ|))[χ² + Σ_{(k,l)≠0}(48/(2λL̂ + l²/2δ))²]"""
    params = model_params(spec, beta, lam, delta)
    statistical = chi_se > 0 or bubble_se > 0
    tol = N_SE * math.hypot(chi_se, bubble_se) if statistical else EXACT_TOL
    upper = bubble_ir_upper_bound(spec, beta, lam, delta, chi)
    by_chi = _worst('bubble_le_chi', params, [chi - bubble], [tol], ['B<=chi'], statistical)
    # the χ² term moves with χ; 2χ·se_χ is its first-order error
    ir_tol = N_SE * math.hypot(2 * chi * chi_se / (beta * spec.n_sites), bubble_se) if statistical else EXACT_TOL
    by_ir = _worst('bubble_le_ir', params, [upper - bubble], [ir_tol], ['B<=IR'], statistical)
    report = _combine('bubble_bounds', {'by_chi': by_chi, 'by_ir': by_ir})
    report.details.update({'chi': chi, 'bubble': bubble, 'ir_upper': _finite_or_none(upper)})
    return report


def check_bubble_agreement(estimate: Sequence[float], exact: float) -> BoundReport:
    """Replica-product (mean, se, tail) against the exact B, within 4·SE + tail"""
    mean, se, tail = estimate
    report = _worst('bubble_agreement', {}, [-abs(mean - exact)], [N_SE * se + tail],
                    ['B'], statistical=True)
    report.details = {'estimate': mean, 'se': se, 'tail': tail, 'exact': exact}
    return report


def check_symmetrization_monotone(acc: EstimatorAccumulator, plan: MeasurementPlan,
                                  names: Sequence[str]) -> BoundReport:
    """Z along a symmetrization sequence is nondecreasing within 4·SE"""
    if len(names) < 2:
        raise DomainError("a symmetrization sequence needs at least two entries")
    est = [zratio_estimate(acc, plan, n) for n in names]
    margins = [b[0] - a[0] for a, b in zip(est, est[1:])]
    tols = [N_SE * math.hypot(a[1], b[1]) for a, b in zip(est, est[1:])]
    locations = [f'{a}->{b}' for a, b in zip(names, names[1:])]
    report = _worst('symmetrization_monotone', model_params(plan.spec, plan.beta, plan.lam, plan.delta),
                    margins, tols, locations, statistical=True)
    report.details = {n: {'zratio': z, 'se': s} for n, (z, s) in zip(names, est)}
    return report


def reports_frame(reports: Iterable[BoundReport]) -> pd.DataFrame:
    rows = []
    for r in reports:
        row = {'check': r.check, 'passed': r.passed, 'margin': r.margin, 'tolerance': r.tolerance,
               'location': r.location, 'statistical': r.statistical}
        row.update(r.params)
        rows.append(row)
    return pd.DataFrame(rows)


def print_reports(reports: Sequence[BoundReport]) -> None:
    print("=" * 60)
    print("VERIFICATION SUMMARY")
    print("=" * 60)
    for r in reports:
        status = "PASS" if r.passed else "FAIL"
        print(f"{status:<5}{r.check:<32} margin {r.margin:>12.4e}  tol {r.tolerance:.1e}"
              f"  at {r.location}")
    print("=" * 60)
    print(f"{sum(r.passed for r in reports)}/{len(reports)} checks passed")
