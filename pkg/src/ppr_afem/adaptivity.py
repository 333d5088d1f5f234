"""Recovery-based error estimation, bulk marking and the adaptive loop."""
from __future__ import annotations

import csv
import io
import json
import logging
import math
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np

from .assembly import ConvergenceError, ProblemSpec, element_beta, solve_problem
from .benchmarks import BenchmarkProblem, exact_errors
from .fespace import FeSpace, NodalField, basis
from .mesh import bisect
from .quadrature import quadrature
from .recovery import recover_gradient, recover_interface, recover_simple_average

__all__ = [
    "IndicatorSet",
    "AdaptiveConfig",
    "HistoryRecord",
    "RunHistory",
    "AdaptError",
    "estimate",
    "estimate_interface",
    "effective_index",
    "dorfler_mark",
    "fit_slope",
    "adapt",
    "VARIANTS",
]

log = logging.getLogger(__name__)

VARIANTS = ("ppr", "simple_average")
HISTORY_FIELDS = ("iter", "ndofs", "eta", "energy_error", "recovered_error", "eff_index", "seconds")


@dataclass(frozen=True)
class IndicatorSet:
    """Elementwise indicators eta_K and the global estimate."""

    eta_k: np.ndarray

    def __post_init__(self):
        eta = np.asarray(self.eta_k, dtype=float)
        if eta.ndim != 1:
            raise ValueError("indicators must be a 1-d array")
        if np.any(~np.isfinite(eta)) or np.any(eta < 0):
            raise ValueError("indicators must be finite and non-negative")
        object.__setattr__(self, "eta_k", eta)

    @property
    def eta(self):
        return math.sqrt(float(np.sum(self.eta_k ** 2)))

    def __len__(self):
        return len(self.eta_k)


def _indicators(space, u_h, local, weight=None):
    rule = quadrature(2 * space.degree + 2)
    phi = basis(space.degree, rule.points)
    rec = np.einsum("qa,mad->mqd", phi, local)
    diff = rec - u_h.gradients_at(rule.points)
    sq = ((diff ** 2).sum(-1) @ rule.weights) * space.mesh.areas
    if weight is not None:
        sq = sq * weight
    return IndicatorSet(np.sqrt(np.maximum(sq, 0.0)))


def estimate(space: FeSpace, u_h: NodalField, recovered) -> IndicatorSet:
    """eta_K = ||G_h u_h - grad u_h||_{0,K} by quadrature of exactness 2k+2."""
    return _indicators(space, u_h, recovered.local())


def estimate_interface(space: FeSpace, u_h: NodalField, recovered, beta) -> IndicatorSet:
    """eta_K = ||beta^(1/2) (R_h u_h - grad u_h)||_{0,K}.

    ``recovered`` is a :class:`~ppr_afem.recovery.PiecewiseRecoveredField`;
    every element uses the recovery of its own region. ``beta`` is the
    per-element coefficient.
    """
    parts = getattr(recovered, "parts", None)
    if parts is not None:
        have = set(parts)
        need = set(space.mesh.region.tolist())
        if not need <= have:
            raise ValueError(f"no recovery for region(s) {sorted(need - have)}")
    beta = np.broadcast_to(np.asarray(beta, dtype=float), (space.mesh.n_triangles,))
    return _indicators(space, u_h, recovered.local(), beta)


def effective_index(eta, error):
    """kappa = eta / e, or ``None`` when the exact error is zero or unknown."""
    if error is None or error == 0:
        return None
    return eta / error


def dorfler_mark(indicators, zeta=0.2):
    """Smallest set of triangles whose indicators carry a ``zeta`` share.

    Triangles are taken in descending order of eta_K (ties by id) until
    sqrt(sum_M eta_K^2) >= zeta sqrt(sum eta_K^2). Returns sorted ids.
    """
    eta = indicators.eta_k if isinstance(indicators, IndicatorSet) else np.asarray(indicators, float)
    if eta.size == 0:
        raise ValueError("empty indicator set")
    if not 0 < zeta <= 1:
        raise ValueError("zeta must lie in (0, 1]")
    top = eta.max()
    if top == 0:
        return np.empty(0, dtype=np.int64)
    order = np.argsort(-eta, kind="stable")
    # normalize so tiny indicators do not underflow when squared
    csum = np.cumsum((eta[order] / top) ** 2)
    total = csum[-1]
    count = int(np.searchsorted(csum, zeta * zeta * total, side="left")) + 1
    count = min(count, len(eta))
    return np.sort(order[:count])


def fit_slope(ndofs, values, window=10):
    """Least-squares slope of log(values) against log(ndofs) over the last
    ``window`` points with positive values."""
    n = np.asarray(ndofs, dtype=float)
    v = np.asarray([np.nan if x is None else x for x in values], dtype=float)
    ok = np.isfinite(v) & (v > 0) & (n > 0)
    n, v = n[ok][-window:], v[ok][-window:]
    if len(n) < 2 or np.ptp(np.log(n)) == 0:
        raise ValueError("need at least two distinct points to fit a slope")
    return float(np.polyfit(np.log(n), np.log(v), 1)[0])


# --------------------------------------------------------------------------
# history

@dataclass
class HistoryRecord:
    iter: int
    ndofs: int
    eta: float
    energy_error: Optional[float]
    recovered_error: Optional[float]
    eff_index: Optional[float]
    seconds: float
    vertices: int = 0
    triangles: int = 0


@dataclass
class RunHistory:
    problem: str
    records: list = field(default_factory=list)
    final_mesh: object = field(default=None, repr=False)
    final_field: object = field(default=None, repr=False)

    def append(self, rec: HistoryRecord):
        if self.records and rec.ndofs <= self.records[-1].ndofs:
            raise ValueError("dof counts must increase strictly")
        self.records.append(rec)

    def __len__(self):
        return len(self.records)

    def column(self, name):
        return [getattr(r, name) for r in self.records]

    def to_csv(self, fh=None, timings=True):
        """CSV table; ``timings=False`` leaves the seconds column empty."""
        out = io.StringIO() if fh is None else fh
        out.write(",".join(HISTORY_FIELDS) + "\n")
        for r in self.records:
            row = []
            for f in HISTORY_FIELDS:
                v = getattr(r, f)
                if v is None or (f == "seconds" and not timings):
                    row.append("")
                elif isinstance(v, float):
                    row.append(f"{v:.17g}")
                else:
                    row.append(str(v))
            out.write(",".join(row) + "\n")
        return out.getvalue() if fh is None else None

    def to_json(self):
        return json.dumps([asdict(r) for r in self.records], indent=1)

    @classmethod
    def from_csv(cls, text, problem=""):
        reader = csv.DictReader(io.StringIO(text))
        if reader.fieldnames is None or list(reader.fieldnames)[:len(HISTORY_FIELDS)] != list(HISTORY_FIELDS):
            raise ValueError("history CSV must start with header " + ",".join(HISTORY_FIELDS))
        hist = cls(problem)

        def num(s, kind=float):
            return None if s in ("", None) else kind(s)

        for row in reader:
            hist.records.append(HistoryRecord(
                num(row["iter"], int), num(row["ndofs"], int), num(row["eta"]),
                num(row["energy_error"]), num(row["recovered_error"]),
                num(row["eff_index"]), num(row["seconds"])))
        return hist

    def slopes(self, window=10):
        """Fitted slopes of eta, energy error and recovered error against N."""
        n = self.column("ndofs")
        out = {}
        for name in ("eta", "energy_error", "recovered_error"):
            try:
                out[name] = fit_slope(n, self.column(name), window)
            except ValueError:
                out[name] = None
        return out


# --------------------------------------------------------------------------
# driver

@dataclass
class AdaptiveConfig:
    zeta: float = 0.2
    max_dofs: int = 100_000
    max_iterations: int = 1000
    degree: Optional[int] = None
    variant: str = "ppr"
    cg_tol: float = 1e-10
    warm_start: bool = True

    def __post_init__(self):
        if not 0 < self.zeta <= 1:
            raise ValueError("zeta must lie in (0, 1]")
        if self.max_dofs <= 0 or self.max_iterations <= 0:
            raise ValueError("max_dofs and max_iterations must be positive")
        if self.degree not in (None, 1, 2):
            raise ValueError("degree must be 1 or 2")
        if self.variant not in VARIANTS:
            raise ValueError(f"variant must be one of {', '.join(VARIANTS)}")


class AdaptError(RuntimeError):
    """Adaptive run aborted; ``history`` holds the iterations completed."""

    def __init__(self, message, history):
        super().__init__(message)
        self.history = history


def _prolong(old_space, old_values, new_space):
    """Cheap initial guess on a refined mesh: old vertex values are kept,
    new vertices and P2 edge dofs take the mean of their edge endpoints."""
    mesh = new_space.mesh
    parents = mesh.parent_edges
    nv_old = old_space.mesh.n_vertices
    if parents is None or len(parents) != mesh.n_vertices - nv_old:
        return None
    vert = np.empty(mesh.n_vertices)
    vert[:nv_old] = old_values[:nv_old]
    vert[nv_old:] = 0.5 * (vert[parents[:, 0]] + vert[parents[:, 1]])
    if new_space.degree == 1:
        return vert
    e = mesh.edges
    return np.concatenate([vert, 0.5 * (vert[e[:, 0]] + vert[e[:, 1]])])


def _recover(space, u_h, spec, variant):
    if variant == "simple_average":
        return recover_simple_average(space, u_h)
    if spec.has_interface:
        return recover_interface(space, u_h)
    return recover_gradient(space, u_h)


def adapt(problem, config: AdaptiveConfig = None, mesh=None, callback=None) -> RunHistory:
    """Solve, estimate, mark and refine until ``max_dofs`` or
    ``max_iterations`` is reached.

    ``problem`` is a :class:`~ppr_afem.benchmarks.BenchmarkProblem` (its
    initial mesh and default degree are used) or a bare
    :class:`~ppr_afem.assembly.ProblemSpec` together with ``mesh``.
    ``callback(record)`` is invoked after every iteration.
    """
    config = config or AdaptiveConfig()
    if isinstance(problem, BenchmarkProblem):
        spec, name = problem.spec, problem.name
        degree = config.degree or problem.degree
        mesh = problem.initial_mesh() if mesh is None else mesh
    elif isinstance(problem, ProblemSpec):
        if mesh is None:
            raise ValueError("a mesh is required with a bare ProblemSpec")
        spec, name, degree = problem, "custom", config.degree or 1
    else:
        raise TypeError("problem must be a BenchmarkProblem or ProblemSpec")

    history = RunHistory(name)
    space = u_h = None
    for it in range(config.max_iterations):
        t0 = time.perf_counter()
        new_space = FeSpace(mesh, degree)
        x0 = None
        if config.warm_start and u_h is not None:
            x0 = _prolong(space, u_h.values, new_space)
        try:
            u_new = solve_problem(new_space, spec, tol=config.cg_tol, x0=x0)
        except ConvergenceError as exc:
            raise AdaptError(f"iteration {it}: {exc}", history) from exc
        space, u_h = new_space, u_new
        rec = _recover(space, u_h, spec, config.variant)
        if spec.has_interface:
            ind = estimate_interface(space, u_h, rec, element_beta(space, spec))
        else:
            ind = estimate(space, u_h, rec)
        energy = recovered = None
        if spec.exact_gradient is not None:
            energy, recovered = exact_errors(space, u_h, spec, rec)
        record = HistoryRecord(it, space.n_dofs, ind.eta, energy, recovered,
                               effective_index(ind.eta, energy),
                               time.perf_counter() - t0, mesh.n_vertices, mesh.n_triangles)
        history.append(record)
        log.info("iter %d: N=%d eta=%.4e err=%s", it, space.n_dofs, ind.eta, energy)
        if callback is not None:
            callback(record)
        if space.n_dofs >= config.max_dofs or it == config.max_iterations - 1:
            break
        marked = dorfler_mark(ind, config.zeta)
        if len(marked) == 0:
            break
        mesh = bisect(mesh, marked)
    history.final_mesh = mesh
    history.final_field = u_h
    return history
