"""Extended convex hull (ECH) of the signed Weymouth curve of a passive pipeline.

The curve is ``g = sgn(dpi) * sqrt(W * |dpi|)`` over a pressure-square
difference range ``[dpi_lo, dpi_hi]``. Three shapes occur:

* ``GENERAL``: the range straddles zero, the flow may reverse. The set is a
  band between two parallel lines plus flow bounds.
* ``DIRECTED_TOUCHING``: the range starts at zero (or the direction is fixed).
* ``DIRECTED_POSITIVE``: the range is strictly positive.

For the directed shapes the set is the exact convex hull: a chord below and the
parabolic cap ``g^2 <= W dpi`` above.
"""

from __future__ import annotations

import enum
import math
from dataclasses import dataclass
from typing import Mapping, Optional

import numpy as np

CONTAINMENT_TOL = 1e-9


class EchCase(enum.Enum):
    GENERAL = "general"
    DIRECTED_TOUCHING = "directed_touching"
    DIRECTED_POSITIVE = "directed_positive"


@dataclass(frozen=True)
class EchConstraintSet:
    case: EchCase
    g_min: float
    g_max: float
    a_L: float
    b_L: float
    a_U: float
    b_U: float
    has_parabolic_cap: bool
    weymouth: float
    dpi_lo: float
    dpi_hi: float


def _curve(w, dpi):
    return math.copysign(math.sqrt(w * abs(dpi)), dpi)


def _check_w(pipeline) -> float:
    w = float(pipeline.weymouth if hasattr(pipeline, "weymouth") else pipeline)
    if not w > 0 or not math.isfinite(w):
        raise ValueError(f"Weymouth constant must be positive and finite, got {w}")
    return w


def _caps(pipeline):
    lo = getattr(pipeline, "g_cap_min", None)
    hi = getattr(pipeline, "g_cap_max", None)
    return (-math.inf if lo is None else lo), (math.inf if hi is None else hi)


def classify_case(pipeline, node_bounds: Mapping, fixed_direction: Optional[bool] = None):
    """Classify a pipeline's ECH shape from its end-node pressure-square boxes.

    ``node_bounds`` maps gas node id to ``(pi_min, pi_max)``. Returns
    ``(case, dpi_lo, dpi_hi)``.
    """
    if fixed_direction is None:
        fixed_direction = bool(getattr(pipeline, "fixed_direction", False))
    imin, imax = node_bounds[pipeline.from_node]
    jmin, jmax = node_bounds[pipeline.to_node]
    lo = imin - jmax
    hi = imax - jmin
    if not hi > lo:
        raise ValueError(f"pipeline {getattr(pipeline, 'id', '?')}: degenerate pressure range [{lo}, {hi}]")
    if hi <= 0:
        raise ValueError(
            f"pipeline {getattr(pipeline, 'id', '?')}: flow can only run against its orientation "
            f"(dpi range [{lo}, {hi}]); reverse from/to"
        )
    if lo > 0:
        return EchCase.DIRECTED_POSITIVE, lo, hi
    if lo == 0 or fixed_direction:
        return EchCase.DIRECTED_TOUCHING, 0.0, hi
    return EchCase.GENERAL, lo, hi


def build_general_ech(pipeline, dpi_lo: float, dpi_hi: float) -> EchConstraintSet:
    """Parallel-line band for a bi-directional pipeline.

    Both lines take the secant slope of the curve over the range; their offsets
    are the extreme curve-to-line gaps, attained at the tangency points
    ``dpi = +-W / (4 s^2)`` when those fall inside the range and at the range
    ends or the origin otherwise. Optional user flow caps shrink the range to
    the part of the curve they admit before the lines are fitted.
    """
    w = _check_w(pipeline)
    if not dpi_lo < 0 < dpi_hi:
        raise ValueError(f"general ECH needs dpi_lo < 0 < dpi_hi, got [{dpi_lo}, {dpi_hi}]")
    cap_lo, cap_hi = _caps(pipeline)
    lo = max(dpi_lo, -(cap_lo * cap_lo) / w) if math.isfinite(cap_lo) else dpi_lo
    hi = min(dpi_hi, (cap_hi * cap_hi) / w) if math.isfinite(cap_hi) else dpi_hi
    if not lo < 0 < hi:
        raise ValueError(f"flow caps ({cap_lo}, {cap_hi}) leave no bi-directional range")
    g_hi = math.sqrt(w * hi)
    g_lo = -math.sqrt(w * -lo)
    s = (g_hi - g_lo) / (hi - lo)

    # gap(d) = curve(d) - s d; concave on d > 0, convex on d < 0
    t = w / (4.0 * s * s)
    cands = [lo, 0.0, hi]
    upper = [c for c in cands] + ([t] if t < hi else [])
    lower = [c for c in cands] + ([-t] if -t > lo else [])
    b_U = max(_curve(w, d) - s * d for d in upper)
    b_L = min(_curve(w, d) - s * d for d in lower)
    return EchConstraintSet(
        case=EchCase.GENERAL,
        g_min=max(cap_lo, g_lo),
        g_max=min(cap_hi, g_hi),
        a_L=s,
        b_L=b_L,
        a_U=s,
        b_U=b_U,
        has_parabolic_cap=False,
        weymouth=w,
        dpi_lo=lo,
        dpi_hi=hi,
    )


def build_directed_ech(pipeline, dpi_lo: float, dpi_hi: float) -> EchConstraintSet:
    """Convex hull of the curve on a non-negative range: chord below, cap above."""
    w = _check_w(pipeline)
    if dpi_lo < 0:
        raise ValueError(f"directed ECH needs dpi_lo >= 0, got {dpi_lo}")
    if not dpi_hi > dpi_lo:
        raise ValueError(f"degenerate range [{dpi_lo}, {dpi_hi}]")
    _, cap_hi = _caps(pipeline)
    lo, hi = dpi_lo, dpi_hi
    if math.isfinite(cap_hi):
        hi = min(hi, cap_hi * cap_hi / w)
        if not hi > lo:
            raise ValueError(f"flow cap {cap_hi} leaves no range above dpi_lo={dpi_lo}")
    g_lo = math.sqrt(w * lo)
    g_hi = math.sqrt(w * hi)
    a = (g_hi - g_lo) / (hi - lo)
    b = g_lo - a * lo
    case = EchCase.DIRECTED_POSITIVE if lo > 0 else EchCase.DIRECTED_TOUCHING
    return EchConstraintSet(
        case=case,
        g_min=g_lo,
        g_max=g_hi,
        a_L=a,
        b_L=b,
        a_U=math.nan,
        b_U=math.nan,
        has_parabolic_cap=True,
        weymouth=w,
        dpi_lo=lo,
        dpi_hi=hi,
    )


def build_ech(pipeline, node_bounds: Mapping) -> EchConstraintSet:
    case, lo, hi = classify_case(pipeline, node_bounds)
    if case is EchCase.GENERAL:
        return build_general_ech(pipeline, lo, hi)
    return build_directed_ech(pipeline, lo, hi)


def build_relaxation(sys) -> dict[str, EchConstraintSet]:
    """ECH constraint set for every passive pipeline of ``sys``."""
    bounds = {n.id: (n.pi_min, n.pi_max) for n in sys.gas_nodes}
    out = {}
    for p in sys.pipelines:
        try:
            out[p.id] = build_ech(p, bounds)
        except ValueError as exc:
            raise ValueError(f"pipeline {p.id}: {exc}") from exc
    return out


def ech_violation(e: EchConstraintSet, g, dpi):
    """Worst violation of the set's rows at ``(g, dpi)``; vectorised over arrays."""
    g = np.asarray(g, dtype=float)
    dpi = np.asarray(dpi, dtype=float)
    v = np.maximum(e.g_min - g, g - e.g_max)
    v = np.maximum(v, e.a_L * dpi + e.b_L - g)
    if e.has_parabolic_cap:
        root = np.sqrt(e.weymouth * np.abs(dpi))
        # distance-like measure in flow units; positive outside the cap
        cap = np.where(dpi >= 0, np.abs(g) - root, np.abs(g) + root)
        v = np.maximum(v, cap)
    else:
        v = np.maximum(v, g - (e.a_U * dpi + e.b_U))
    return np.maximum(v, 0.0)


def ech_contains(e: EchConstraintSet, g: float, dpi: float, tol: float = CONTAINMENT_TOL):
    """``(inside, worst_violation)`` for a single point."""
    v = float(ech_violation(e, g, dpi))
    return v <= tol, v


def sample_curve(e: EchConstraintSet, count: int = 10_000):
    """Uniform curve samples ``(g, dpi)`` over the set's pressure range."""
    dpi = np.linspace(e.dpi_lo, e.dpi_hi, count)
    g = np.sign(dpi) * np.sqrt(e.weymouth * np.abs(dpi))
    return g, dpi
