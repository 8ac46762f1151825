"""End-to-end pipeline and the experiment harnesses behind the CLI.

partition -> relaxation -> (J-ADMM | centralized) -> feasibility check and
recovery -> report.
"""

from __future__ import annotations

import math
import time
from dataclasses import asdict, dataclass, field, replace
from typing import Optional, Sequence

import numpy as np

from . import jadmm
from .centralized import solve_centralized
from .io import ResultReport
from .model import Dispatch, IegsSystem, weymouth_residual
from .partition import CompactForm, assemble_compact, decouple
from .qp import INFEASIBLE as QP_INFEASIBLE, OPTIMAL
from .recovery import RecoveryOutcome, VerifyReport, check_and_recover, verify_original

CENTRALIZED = "centralized"
MODES = (jadmm.JACOBI, jadmm.GAUSS, CENTRALIZED)
INFEASIBLE = "infeasible"

EXIT_OK = 0
EXIT_INPUT = 1
EXIT_SLACK = 2
EXIT_NOT_CONVERGED = 3
EXIT_INFEASIBLE = 4

WEYMOUTH_TOL = 1e-6


def normalize_mode(mode: str) -> str:
    m = {"gauss": jadmm.GAUSS, "gauss-seidel": jadmm.GAUSS}.get(mode, mode)
    if m not in MODES:
        raise ValueError(f"mode must be one of jacobi, gauss, centralized; got {mode!r}")
    return m


@dataclass
class SolveOutcome:
    system: IegsSystem
    cf: CompactForm
    mode: str
    config: Optional[jadmm.JadmmConfig]
    status: str
    objective: float
    iterations: int
    elapsed: float
    xs: Optional[list] = None
    dispatch: Optional[Dispatch] = None
    trace: Optional[jadmm.ResidualTrace] = None
    recovery: Optional[RecoveryOutcome] = None
    verify: Optional[VerifyReport] = None
    max_weymouth_before: float = math.nan
    messages: list = field(default_factory=list)

    @property
    def converged(self) -> bool:
        return self.status == jadmm.CONVERGED

    @property
    def feasible_before(self) -> Optional[bool]:
        if math.isnan(self.max_weymouth_before):
            return None
        return self.max_weymouth_before <= WEYMOUTH_TOL

    @property
    def exit_code(self) -> int:
        if self.status == INFEASIBLE:
            return EXIT_INFEASIBLE
        if not self.converged:
            return EXIT_NOT_CONVERGED
        if self.recovery is not None and self.recovery.recovered:
            return EXIT_OK
        return EXIT_SLACK

    def coupling_residuals(self) -> list:
        if self.xs is None:
            return []
        res = self.cf.coupling_residual(self.xs)
        out = []
        for c, r in zip(self.cf.couplings, res):
            out.append({"kind": c.kind, "left": list(c.left), "right": list(c.right), "scaled": float(r), "physical": float(r / c.scale)})
        return out

    def report(self, network: str = "") -> ResultReport:
        cfg = {} if self.config is None else asdict(self.config)
        cfg["cost_scale"] = self.cf.cost_scale
        rec = self.recovery
        sol = rec.dispatch if rec is not None and rec.recovered else self.dispatch
        disp = {}
        if sol is not None:
            disp = {k: v for k, v in asdict(sol).items() if v is not None}
        extra = {}
        if rec is not None:
            extra = {
                "delta_plus": rec.delta_plus,
                "delta_minus": rec.delta_minus,
                "additive_slack_nodes": list(rec.additive_slack_nodes),
                "note": rec.note,
            }
        return ResultReport(
            network=network or self.system.name,
            mode=self.mode,
            status=self.status,
            objective=self.objective,
            iterations=self.iterations,
            elapsed_s=self.elapsed,
            recovery=None if rec is None else rec.status,
            slack_objective=None if rec is None else rec.objective,
            feasible_before_recovery=self.feasible_before,
            max_weymouth_residual=None if math.isnan(self.max_weymouth_before) else self.max_weymouth_before,
            parameters=cfg,
            dispatch=disp,
            coupling_residuals=self.coupling_residuals(),
            recovery_detail=extra,
            verification=None if self.verify is None else {
                "passed": self.verify.passed,
                "violations": self.verify.violations,
                "worst": self.verify.worst,
            },
            messages=list(self.messages),
        )


def max_weymouth(sys: IegsSystem, d: Dispatch) -> float:
    return max((abs(weymouth_residual(p, d.g_pipe[p.id], d.pi[p.from_node], d.pi[p.to_node])) for p in sys.pipelines), default=0.0)


def solve(
    sys: IegsSystem,
    mode: str = jadmm.JACOBI,
    cfg: Optional[jadmm.JadmmConfig] = None,
    workers: Optional[int] = None,
    time_limit: Optional[float] = None,
    regions=None,
    cf: Optional[CompactForm] = None,
) -> SolveOutcome:
    """Solve the relaxed problem, then check and recover an exact gas solution."""
    mode = normalize_mode(mode)
    if cf is None:
        cf = assemble_compact(decouple(sys, regions))
    t0 = time.perf_counter()
    msgs = []
    trace = None
    if mode == CENTRALIZED:
        cfg = None
        res = solve_centralized(cf)
        xs, it = res.xs, res.report.iterations
        status = {OPTIMAL: jadmm.CONVERGED, QP_INFEASIBLE: INFEASIBLE}.get(res.report.status, jadmm.MAX_ITER)
    else:
        cfg = replace(cfg or jadmm.JadmmConfig(), mode=mode)
        try:
            res = jadmm.run(cf, cfg, workers=workers, time_limit=time_limit)
        except jadmm.BlockInfeasibleError as exc:
            msgs.append(str(exc))
            return SolveOutcome(sys, cf, mode, cfg, INFEASIBLE, math.nan, exc.iteration, time.perf_counter() - t0, messages=msgs)
        xs, it, status, trace = res.state.xs, res.iterations, res.status, res.trace
    elapsed = time.perf_counter() - t0
    if status == INFEASIBLE:
        msgs.append("the relaxed problem is infeasible")
        return SolveOutcome(sys, cf, mode, cfg, status, math.nan, it, elapsed, trace=trace, messages=msgs)
    out = SolveOutcome(sys, cf, mode, cfg, status, cf.objective(xs), it, elapsed, xs=xs, dispatch=cf.dispatch(xs), trace=trace, messages=msgs)
    if status != jadmm.CONVERGED:
        msgs.append(f"stopped without convergence ({status}) after {it} iterations")
        return out
    out.max_weymouth_before = max_weymouth(sys, out.dispatch)
    rec = check_and_recover(out.dispatch, sys)
    out.recovery = rec
    if rec.recovered:
        # distributed runs agree across blocks only up to the stopping tolerance
        ctol = None if cfg is None else math.sqrt(cfg.eps_primal)
        out.verify = verify_original(rec.dispatch, sys, coupling_tol=ctol, weymouth_tol=WEYMOUTH_TOL)
        if not out.verify.passed:
            msgs.append("recovered solution failed verification: " + ", ".join(sorted(out.verify.violations)[:5]))
    else:
        msgs.append(f"not recoverable: slack LP {rec.status}, objective {rec.objective:.6g}; {rec.note}")
    return out


# --------------------------------------------------------------------------
# parameter sweep
# --------------------------------------------------------------------------


@dataclass
class SweepCell:
    d: float
    gamma: float
    status: str
    iterations: int
    elapsed: float
    objective: float


def cmd_sweep(
    sys: IegsSystem,
    d_list: Sequence[float],
    gamma_list: Sequence[float],
    base: Optional[jadmm.JadmmConfig] = None,
    mode: str = jadmm.JACOBI,
    time_limit: float = 60.0,
    workers: Optional[int] = None,
) -> list[SweepCell]:
    """One J-ADMM run per ``(d, gamma)`` on a shared compact form."""
    if not d_list or not gamma_list:
        raise ValueError("d and gamma lists must be nonempty")
    mode = normalize_mode(mode)
    if mode == CENTRALIZED:
        raise ValueError("a parameter sweep needs a distributed mode")
    base = base or jadmm.JadmmConfig()
    cf = assemble_compact(decouple(sys))
    cells = []
    for g in gamma_list:
        for d in d_list:
            cfg = replace(base, d=float(d), gamma=float(g), mode=mode)
            try:
                r = jadmm.run(cf, cfg, workers=workers, time_limit=time_limit)
                cells.append(SweepCell(float(d), float(g), r.status, r.iterations, r.elapsed, r.objective))
            except jadmm.BlockInfeasibleError as exc:
                cells.append(SweepCell(float(d), float(g), INFEASIBLE, exc.iteration, math.nan, math.nan))
    return cells


def format_sweep(cells: Sequence[SweepCell], budget: float) -> str:
    """Rows are gamma values, columns d values; cells read ``iterations (seconds)``."""
    ds = sorted({c.d for c in cells})
    gs = sorted({c.gamma for c in cells})
    at = {(c.d, c.gamma): c for c in cells}
    head = "gamma \\ d".ljust(12) + "".join(f"{d:>18g}" for d in ds)
    lines = [head]
    for g in gs:
        row = f"{g:<12g}"
        for d in ds:
            c = at.get((d, g))
            if c is None:
                txt = "-"
            elif c.status == jadmm.CONVERGED:
                txt = f"{c.iterations} ({c.elapsed:.1f}s)"
            elif c.status == jadmm.TIME_LIMIT:
                txt = f">{budget:g}s"
            else:
                txt = c.status
            row += f"{txt:>18}"
        lines.append(row)
    return "\n".join(lines)


# --------------------------------------------------------------------------
# load scan
# --------------------------------------------------------------------------


@dataclass
class ScanRow:
    scale: float
    status: str
    portion: float  # well output over well capacity
    feasibility: str  # "F" exact Weymouth already holds, "IF" it does not, "-" no solution
    recoverability: str  # "Y", "N" or "-"
    objective: float
    slack_objective: float
    verified: Optional[bool]


def well_portion(sys: IegsSystem, d: Dispatch) -> float:
    cap = sum(w.g_max for w in sys.wells)
    return sum(d.g_well[w.id] for w in sys.wells) / cap if cap > 0 else math.nan


def cmd_scan_loads(
    sys: IegsSystem,
    scales: Sequence[float],
    mode: str = jadmm.JACOBI,
    cfg: Optional[jadmm.JadmmConfig] = None,
    time_limit: Optional[float] = None,
    workers: Optional[int] = None,
) -> list[ScanRow]:
    """Scale every load, solve, and test recoverability."""
    rows = []
    for s in scales:
        if not s > 0:
            raise ValueError(f"load scales must be positive, got {s}")
        scaled = sys.scaled_loads(float(s))
        out = solve(scaled, mode, cfg, workers=workers, time_limit=time_limit)
        if out.dispatch is None or not out.converged:
            rows.append(ScanRow(float(s), out.status, math.nan, "-", "-", out.objective, math.nan, None))
            continue
        rec = out.recovery
        rows.append(
            ScanRow(
                scale=float(s),
                status=out.status,
                portion=well_portion(scaled, out.dispatch),
                feasibility="F" if out.feasible_before else "IF",
                recoverability="Y" if rec.recovered else "N",
                objective=out.objective,
                slack_objective=rec.objective,
                verified=None if out.verify is None else out.verify.passed,
            )
        )
    return rows


def format_scan(rows: Sequence[ScanRow]) -> str:
    lines = [f"{'scale':>7} {'portion':>8} {'feas.':>6} {'recov.':>7} {'objective':>14} {'slack':>10} status"]
    for r in rows:
        por = "-" if math.isnan(r.portion) else f"{r.portion:.3f}"
        obj = "-" if math.isnan(r.objective) else f"{r.objective:.6g}"
        sl = "-" if math.isnan(r.slack_objective) else f"{r.slack_objective:.3g}"
        lines.append(f"{r.scale:>7g} {por:>8} {r.feasibility:>6} {r.recoverability:>7} {obj:>14} {sl:>10} {r.status}")
    return "\n".join(lines)
