"""End-to-end runs: grouping, optimisation, analytic variances and sampling.

Non-overlapping methods (``lf``, ``si``) use the optimal allocation for their
groups.  The overlapping methods start from the SI groups extended with every
compatible term, split according to the SI allocation.
"""
from dataclasses import dataclass, field

import numpy as np

from .errors import ConvergenceError, InfeasibleError, ValidationError
from .grouping import Relation, extend_overlap, group_lf, group_si
from .optimizers import gma_optimize, ics_optimize, ima_optimize
from .statevector import CovarianceOracle, GroupSampler
from .variance import (
    AllocationState,
    group_variances,
    nonoverlapping_variance,
    optimal_allocation,
    overlap_variance_from_blocks,
)

METHODS = ("lf", "si", "ima", "gma", "ics")
OVERLAPPING = ("ima", "gma", "ics")
MIN_SHARE = 1e-12


@dataclass
class MethodOptions:
    ima_cycles: int = 10
    gma_steps: int = 500
    gma_learning_rate: float = 1.0
    ics_max_outer: int = 100
    ics_tol: float = 1e-6
    ics_max_free: int = None


@dataclass
class MethodResult:
    """Outcome of one method.

    ``estimator`` is ``"split"`` when each group is measured with its own
    coefficients and ``"average"`` when every term is averaged over all groups
    that measure it.
    """

    method: str
    variance: float = float("nan")
    fragments: object = None
    allocation: AllocationState = None
    estimator: str = "split"
    trace: object = None
    error: str = None
    error_kind: str = None

    @property
    def ok(self):
        return self.error is None

    def to_dict(self, trace=False):
        if not self.ok:
            return {"error": self.error, "error_kind": self.error_kind}
        out = {
            "variance": self.variance,
            "n_groups": self.fragments.n_groups,
            "n_split_variables": self.fragments.n_split_variables,
            "estimator": self.estimator,
            "allocation": self.allocation.m,
        }
        if self.trace is not None:
            out["iterations"] = len(self.trace.entries)
            out["warnings"] = sorted(set(self.trace.warnings))
            if trace:
                out["trace"] = self.trace.to_dict()["entries"]
        return out


def si_start(si_frags, oracle, blocks=None):
    """SI allocation with zeros lifted to a tiny share so every term stays measured."""
    m = optimal_allocation(group_variances(si_frags, oracle, blocks)).m
    m = np.maximum(m, MIN_SHARE)
    return AllocationState(m / m.sum())


def variable_counts(h, relation):
    """Numbers of allocation variables (SI groups) and split variables (overlapping groups)."""
    si = group_si(h, relation)
    ov = extend_overlap(h, si)
    return {"n_terms": h.n_terms, "ma_variables": si.n_groups, "cs_variables": ov.n_split_variables}


def run_methods(h, state, relation, methods=METHODS, options=None, proxy=None):
    """Variance of every requested method.

    ``proxy`` (a second state) is used for all optimisation decisions while
    the reported variances are evaluated on ``state``.
    """
    relation = Relation(relation)
    options = options or MethodOptions()
    unknown = set(methods) - set(METHODS)
    if unknown or not methods:
        raise ValidationError(f"methods must be a non-empty subset of {METHODS}")
    evaluate = CovarianceOracle(state)
    decide = CovarianceOracle(proxy) if proxy is not None else evaluate
    results = {}

    def plain(name, frags):
        alloc = optimal_allocation(group_variances(frags, decide))
        variance = nonoverlapping_variance(group_variances(frags, evaluate), alloc.m)
        return MethodResult(name, variance, frags, alloc)

    if "lf" in methods:
        results["lf"] = _guard("lf", lambda: plain("lf", group_lf(h, relation)))
    si = group_si(h, relation)
    if "si" in methods:
        results["si"] = _guard("si", lambda: plain("si", si))
    wanted = [m for m in OVERLAPPING if m in methods]
    if not wanted:
        return results

    start = si_start(si, decide)
    ov = extend_overlap(h, si, start)
    blocks = decide.covariance_blocks(h, ov.groups)
    eval_blocks = blocks if decide is evaluate else evaluate.covariance_blocks(h, ov.groups)

    def ima():
        alloc, trace = ima_optimize(ov, decide, options.ima_cycles, allocation=start, blocks=blocks)
        v = overlap_variance_from_blocks(ov, eval_blocks, alloc.m)
        return MethodResult("ima", v, ov, alloc, "average", trace)

    def gma():
        alloc, trace = gma_optimize(ov, decide, options.gma_steps, options.gma_learning_rate,
                                    allocation=start, blocks=blocks)
        v = overlap_variance_from_blocks(ov, eval_blocks, alloc.m)
        return MethodResult("gma", v, ov, alloc, "average", trace)

    def ics():
        frags, alloc, trace = ics_optimize(ov, decide, options.ics_max_outer, options.ics_tol,
                                           allocation=start, blocks=blocks, max_free=options.ics_max_free)
        v = nonoverlapping_variance(group_variances(frags, None, eval_blocks), alloc.m)
        return MethodResult("ics", v, frags, alloc, "split", trace)

    for name, fn in (("ima", ima), ("gma", gma), ("ics", ics)):
        if name in wanted:
            results[name] = _guard(name, fn)
    return results


def _guard(name, fn):
    try:
        return fn()
    except InfeasibleError as err:
        return MethodResult(name, error=str(err), error_kind="infeasible")
    except ConvergenceError as err:
        return MethodResult(name, error=str(err), error_kind="convergence")


# ---------------------------------------------------------------------------
# sampling
# ---------------------------------------------------------------------------

def shot_counts(m, shots):
    """``floor(M m_a)`` shots per group; leftover shots go to the largest ``m_a``."""
    m = np.asarray(m, dtype=float)
    counts = np.floor(shots * m).astype(np.int64)
    left = int(shots - counts.sum())
    if left > 0:
        order = np.argsort(-m, kind="stable")
        counts[order[:left]] += 1
    return counts


def _substream(seed, rep, group):
    return np.random.default_rng(np.random.SeedSequence(seed, spawn_key=(rep, group)))


@dataclass
class SampleReport:
    estimates: np.ndarray
    shots: np.ndarray
    analytic_variance: float
    analytic_at_shots: float
    exact_energy: float
    extras: dict = field(default_factory=dict)

    @property
    def mean(self):
        return float(np.mean(self.estimates))

    @property
    def empirical_variance(self):
        if self.estimates.size < 2:
            return 0.0
        # shifting by one sample keeps identical estimates at exactly zero spread
        return float(np.var(self.estimates - self.estimates[0], ddof=1))

    def to_dict(self):
        total = int(self.shots.sum())
        return {
            "shots": total,
            "repetitions": int(self.estimates.size),
            "group_shots": self.shots,
            "mean": self.mean,
            "exact_energy": self.exact_energy,
            "empirical_variance": self.empirical_variance,
            "empirical_variance_times_shots": self.empirical_variance * total,
            "analytic_variance": self.analytic_variance,
            "analytic_variance_at_shots": self.analytic_at_shots,
        }


def sample_estimator(result, state, shots, repetitions, seed=0):
    """Simulate ``repetitions`` independent ``shots``-measurement energy estimates."""
    if not result.ok:
        raise ValidationError(f"method {result.method} has no result: {result.error}")
    frags = result.fragments
    h = frags.hamiltonian
    m = result.allocation.m
    counts = shot_counts(m, shots)
    needed = m > 0
    if np.any(counts[needed] == 0):
        raise InfeasibleError(f"{shots} shots cannot give every one of the {int(needed.sum())} groups a measurement")
    oracle = CovarianceOracle(state)
    blocks = oracle.covariance_blocks(h, frags.groups)
    ps = h.paulis
    samplers = [GroupSampler([ps[k] for k in g], state) for g in frags.groups]
    constant = h.constant
    c = h.coeffs
    estimates = np.empty(repetitions)
    for rep in range(repetitions):
        if result.estimator == "split":
            total = constant
            for a, (sampler, cf) in enumerate(zip(samplers, frags.split_coeffs)):
                if counts[a] == 0:
                    continue
                outcomes, n = sampler.counts(counts[a], _substream(seed, rep, a))
                total += float(n @ (outcomes @ cf)) / counts[a]
        else:
            sums = np.zeros(h.n_terms)
            for a, (sampler, g) in enumerate(zip(samplers, frags.groups)):
                if counts[a] == 0:
                    continue
                outcomes, n = sampler.counts(counts[a], _substream(seed, rep, a))
                sums[g] += n @ outcomes
            measured = frags.totals(counts.astype(float))
            used = measured > 0
            total = constant + float(c[used] @ (sums[used] / measured[used]))
        estimates[rep] = total
    if result.estimator == "split":
        gv = group_variances(frags, None, blocks)
        analytic = nonoverlapping_variance(gv, m)
        at_shots = nonoverlapping_variance(gv, counts.astype(float))
    else:
        analytic = overlap_variance_from_blocks(frags, blocks, m)
        at_shots = overlap_variance_from_blocks(frags, blocks, counts.astype(float))
    energy = float(c @ oracle.term_expectations(h))
    return SampleReport(estimates, counts, analytic, at_shots, energy)
