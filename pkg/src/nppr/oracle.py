"""Independent brute-force verifiers for desk-scale instances.

These deliberately share nothing with the Monte-Carlo estimators beyond the
classifier forward pass: robustness is decided by exhaustive grid search and
probabilities by quadrature, so the learned pipeline can be checked against
something that cannot lie about its own assumptions.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from .metrics import RobustnessReport, mc_half_width
from .models import Classifier, DependencyMode


@dataclass
class GridSpec:
    """Uniform grid over the L-infinity ball [-gamma, gamma]^dims."""
    dims: int
    points_per_dim: int
    gamma: float
    max_points: int = 10 ** 6

    def __post_init__(self):
        if self.points_per_dim < 3 or self.points_per_dim % 2 == 0:
            raise ValueError("grid: points_per_dim must be odd and >= 3 (includes the center)")
        if self.gamma <= 0:
            raise ValueError("grid: gamma must be > 0")
        if self.points_per_dim ** self.dims > self.max_points:
            raise ValueError(
                f"grid: {self.points_per_dim}^{self.dims} points exceed cap {self.max_points}")

    def points(self) -> np.ndarray:
        """All grid offsets, ordered lexicographically by index."""
        axis = np.linspace(-self.gamma, self.gamma, self.points_per_dim)
        mesh = np.meshgrid(*([axis] * self.dims), indexing="ij")
        return np.stack([m.ravel() for m in mesh], axis=1)


@dataclass
class OracleArResult:
    robust: bool
    worst_point: np.ndarray | None


def oracle_ar(clf: Classifier, x: np.ndarray, y: int, grid: GridSpec) -> OracleArResult:
    """Exhaustive label-flip search over the grid.

    Sound one way only: a reported flip is a real flip; robustness claims are
    relative to the grid resolution. The first flipping offset in index order
    is returned as the witness.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != grid.dims:
        raise ValueError(f"oracle_ar: input dim {x.shape[0]} != grid dims {grid.dims}")
    offsets = grid.points()
    preds = clf.predict(x[None, :] + offsets)
    flips = np.nonzero(preds != int(y))[0]
    if flips.size == 0:
        return OracleArResult(robust=True, worst_point=None)
    return OracleArResult(robust=False, worst_point=offsets[flips[0]].copy())


def uniform_ball_density(grid: GridSpec):
    """Constant density of the uniform law on the ball."""
    vol = (2.0 * grid.gamma) ** grid.dims

    def density(points: np.ndarray) -> np.ndarray:
        return np.full(points.shape[0], 1.0 / vol)

    return density


def oracle_pr(clf: Classifier, x: np.ndarray, y: int, dist, grid: GridSpec) -> float:
    """Quadrature estimate of the retention probability.

    `dist` is either "uniform_ball" or a callable mapping grid offsets to
    density values. Weights are normalized over the grid, so the estimate
    converges to the true probability as points_per_dim grows.
    """
    x = np.asarray(x, dtype=np.float64).reshape(-1)
    if x.shape[0] != grid.dims:
        raise ValueError(f"oracle_pr: input dim {x.shape[0]} != grid dims {grid.dims}")
    if dist == "uniform_ball":
        density = uniform_ball_density(grid)
    elif callable(dist):
        density = dist
    else:
        raise ValueError("oracle_pr: dist must be 'uniform_ball' or a density callable")
    offsets = grid.points()
    weights = np.asarray(density(offsets), dtype=np.float64)
    total = weights.sum()
    if total <= 0:
        raise ValueError("oracle_pr: density is zero on the whole grid")
    correct = clf.predict(x[None, :] + offsets) == int(y)
    return float(np.sum(weights * correct) / total)


def linear_flip_threshold(weights: np.ndarray, x: np.ndarray, y: int) -> tuple[float, float]:
    """Closed-form flip test for a binary linear classifier logits = x @ W + b.

    Returns (margin, attack_reach_per_gamma): a flip inside radius gamma exists
    iff margin <= gamma * reach. `weights` is ((d, 2) W, (2,) b).
    """
    W, b = weights
    logits = x @ W + b
    other = 1 - int(y)
    margin = float(logits[int(y)] - logits[other])
    reach = float(np.abs(W[:, int(y)] - W[:, other]).sum())
    return margin, reach


@dataclass
class InequalityVerdict:
    name: str
    lhs: float
    rhs: float
    half_width: float
    passed: bool

    def to_dict(self) -> dict:
        return {"name": self.name, "lhs": self.lhs, "rhs": self.rhs,
                "half_width": self.half_width, "pass": self.passed}


def _hw(p: float, draws: int) -> float:
    return mc_half_width(p, draws) if draws > 0 else 0.0


def verify_propositions(reports: list[RobustnessReport]) -> dict:
    """Check the metric orderings over a set of reports from one experiment.

    Per report: AR(PGD) <= NPPR <= PR(uniform) and NPPR <= PR(Gaussian).
    Across reports: every conditional mode's NPPR <= every independent-mode
    NPPR on the same instance. Tolerances are summed 3-sigma half-widths.
    """
    if not reports:
        raise ValueError("verify_propositions: no reports")
    key = (reports[0].model_key, reports[0].dataset_key, reports[0].gamma)
    for r in reports[1:]:
        if (r.model_key, r.dataset_key, r.gamma) != key:
            raise ValueError(
                f"verify_propositions: report keys differ: {key} vs "
                f"{(r.model_key, r.dataset_key, r.gamma)}")

    verdicts: list[InequalityVerdict] = []

    def check(name, lhs, rhs, hw):
        verdicts.append(InequalityVerdict(name, float(lhs), float(rhs), float(hw),
                                          bool(lhs <= rhs + hw)))

    for r in reports:
        tag = r.mode or "generator"
        hw_nppr = _hw(r.nppr_test, r.nppr_draws)
        hw_pr = _hw(r.pr_uniform, r.pr_draws)
        hw_prg = _hw(r.pr_gaussian, r.pr_draws)
        hw_ar = _hw(r.ar_pgd, r.ar_points)
        check(f"ar_pgd<=nppr[{tag}]", r.ar_pgd, r.nppr_test, hw_ar + hw_nppr)
        check(f"nppr<=pr_uniform[{tag}]", r.nppr_test, r.pr_uniform, hw_nppr + hw_pr)
        check(f"nppr<=pr_gaussian[{tag}]", r.nppr_test, r.pr_gaussian, hw_nppr + hw_prg)

    independents = [r for r in reports if r.mode == DependencyMode.INDEPENDENT.value]
    conditionals = [r for r in reports if r.mode and r.mode != DependencyMode.INDEPENDENT.value]
    for cond in conditionals:
        for indep in independents:
            hw = _hw(cond.nppr_test, cond.nppr_draws) + _hw(indep.nppr_test, indep.nppr_draws)
            check(f"nppr[{cond.mode}]<=nppr[independent]", cond.nppr_test, indep.nppr_test, hw)

    return {
        "experiment": {"model_key": key[0], "dataset_key": key[1], "gamma": key[2]},
        "inequalities": [v.to_dict() for v in verdicts],
        "all_pass": all(v.passed for v in verdicts),
    }


def verdict_to_json(verdict: dict) -> str:
    return json.dumps(verdict, sort_keys=True, indent=2)
