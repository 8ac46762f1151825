"""Command line: ``iegs solve|sweep|scan|validate|fixture``."""

from __future__ import annotations

import argparse
import logging
import math
import sys
from typing import Optional, Sequence

from . import experiments, fixtures, jadmm
from .io import NetworkFormatError, load_network, save_network, write_report
from .model import validate_system

log = logging.getLogger("iegs")

FIXTURES = {"two-block": fixtures.two_block, "four-block": fixtures.four_block}


def _floats(text: str) -> list[float]:
    try:
        return [float(t) for t in text.replace(";", ",").split(",") if t.strip()]
    except ValueError:
        raise argparse.ArgumentTypeError(f"expected comma-separated numbers, got {text!r}") from None


def _grid(text: str):
    """``d1,d2:g1,g2`` -> (d list, gamma list)."""
    if ":" not in text:
        raise argparse.ArgumentTypeError("grid must look like 'd1,d2,...:g1,g2,...'")
    d, g = text.split(":", 1)
    return _floats(d), _floats(g)


def _config_args(p: argparse.ArgumentParser):
    p.add_argument("--d", type=float, default=4.0, help="penalty parameter (default 4)")
    p.add_argument("--gamma", type=float, default=1.0, help="multiplier damping in (0, 2) (default 1)")
    p.add_argument("--p-factor", type=float, default=1.1, help="proximal factor > 1 (default 1.1)")
    p.add_argument("--eps-primal", type=float, default=1e-4)
    p.add_argument("--eps-dual", type=float, default=1e-4)
    p.add_argument("--max-iter", type=int, default=1000)
    p.add_argument("--mode", default="jacobi", choices=["jacobi", "gauss", "centralized"])
    p.add_argument("--workers", type=int, default=None, help="threads for jacobi mode (default: one per block)")
    p.add_argument("--time-limit", type=float, default=None, help="wall-clock budget in seconds")


def _config(a) -> jadmm.JadmmConfig:
    return jadmm.JadmmConfig(
        d=a.d, gamma=a.gamma, p_factor=a.p_factor, eps_primal=a.eps_primal, eps_dual=a.eps_dual, k_max=a.max_iter
    ).validate()


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="iegs", description="Distributed optimal energy flow of integrated electricity-gas systems")
    ap.add_argument("-v", "--verbose", action="store_true")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("solve", help="solve one network and check recoverability")
    p.add_argument("network")
    _config_args(p)
    p.add_argument("--trace", help="write the residual trace CSV here")
    p.add_argument("--report", help="write the JSON result report here")

    p = sub.add_parser("sweep", help="iterations over a (d, gamma) grid")
    p.add_argument("network")
    _config_args(p)
    p.add_argument("--grid", type=_grid, required=True, help="'d1,d2:g1,g2'")
    p.add_argument("--budget", type=float, default=60.0, help="seconds per cell (default 60)")

    p = sub.add_parser("scan", help="recoverability under uniform load scales")
    p.add_argument("network")
    _config_args(p)
    p.add_argument("--scales", type=_floats, required=True, help="comma-separated load multipliers")

    p = sub.add_parser("validate", help="parse and validate a network file")
    p.add_argument("network")

    p = sub.add_parser("fixture", help="write a built-in test network")
    p.add_argument("name", choices=sorted(FIXTURES))
    p.add_argument("output")
    return ap


def _summary(out: experiments.SolveOutcome) -> str:
    lines = [
        f"status      {out.status}",
        f"mode        {out.mode}",
        f"objective   {out.objective:.8g}" if math.isfinite(out.objective) else "objective   -",
        f"iterations  {out.iterations}",
        f"time        {out.elapsed:.2f} s",
    ]
    if out.recovery is not None:
        lines.append(f"recovery    {out.recovery.status} (slack {out.recovery.objective:.3g})")
        fb = out.feasible_before
        lines.append(f"exact before recovery  {'yes' if fb else 'no'} (max Weymouth residual {out.max_weymouth_before:.3g})")
    if out.verify is not None:
        lines.append(f"verified    {'pass' if out.verify.passed else 'FAIL'}")
    lines += out.messages
    return "\n".join(lines)


def main(argv: Optional[Sequence[str]] = None) -> int:
    ap = build_parser()
    a = ap.parse_args(argv)
    logging.basicConfig(level=logging.INFO if a.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        if a.command == "fixture":
            save_network(FIXTURES[a.name](), a.output)
            return experiments.EXIT_OK
        net = load_network(a.network)
        if a.command == "validate":
            issues = validate_system(net, require_regions=False)
            print(f"{a.network}: {len(net.power_nodes)} power nodes, {len(net.gas_nodes)} gas nodes, "
                  f"{len({n.region for n in net.power_nodes})} region(s): ok")
            return experiments.EXIT_OK if not issues else experiments.EXIT_INPUT
        cfg = _config(a)
    except (NetworkFormatError, OSError, ValueError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return experiments.EXIT_INPUT

    mode = experiments.normalize_mode(a.mode)
    if a.command == "solve":
        try:
            out = experiments.solve(net, mode, cfg, workers=a.workers, time_limit=a.time_limit)
        except ValueError as exc:
            print(f"error: {exc}", file=sys.stderr)
            return experiments.EXIT_INPUT
        print(_summary(out))
        if a.trace and out.trace is not None:
            out.trace.write_csv(a.trace)
        if a.report:
            write_report(out.report(a.network), a.report)
        return out.exit_code
    if a.command == "sweep":
        ds, gs = a.grid
        cells = experiments.cmd_sweep(net, ds, gs, cfg, mode=mode, time_limit=a.budget, workers=a.workers)
        print(experiments.format_sweep(cells, a.budget))
        return experiments.EXIT_OK
    if a.command == "scan":
        rows = experiments.cmd_scan_loads(net, a.scales, mode, cfg, time_limit=a.time_limit, workers=a.workers)
        print(experiments.format_scan(rows))
        return experiments.EXIT_OK
    return experiments.EXIT_INPUT  # pragma: no cover


if __name__ == "__main__":  # pragma: no cover
    sys.exit(main())
