import numpy as np
import pytest

from iegs import ech
from iegs.model import (
    CoalGenerator,
    Dispatch,
    GasBlock,
    GasCompressor,
    GasFiredGenerator,
    GasNode,
    GasPipeline,
    GasWell,
    IegsSystem,
    Load,
    PowerBlock,
    PowerLine,
    PowerNode,
    balance_residuals,
    gas_block_constraints,
    id_key,
    power_block_constraints,
    validate_system,
    weymouth_residual,
)


def small_system(**over):
    base = dict(
        power_nodes=(PowerNode("1", -0.5, 0.5, "A"), PowerNode("2", -0.5, 0.5, "A")),
        power_lines=(PowerLine("L1", "1", "2", 0.1, 100.0),),
        coal_generators=(CoalGenerator("C1", "1", 0.0, 100.0, 0.01, 20.0),),
        gas_nodes=(GasNode("1", 1.0, 5.0), GasNode("2", 1.0, 5.0), GasNode("3", 1.0, 5.0)),
        pipelines=(GasPipeline("P1", "1", "2", 1.0), GasPipeline("P2", "2", "3", 1.0)),
        wells=(GasWell("W1", "1", 0.0, 10.0, 5.0),),
        loads=(Load("D1", "2", "power", 30.0), Load("D2", "3", "gas", 1.0)),
    )
    base.update(over)
    return IegsSystem(**base)


def test_valid_system_has_no_issues():
    assert validate_system(small_system()) == []


def test_dangling_gas_reference_is_reported():
    sys = small_system(pipelines=(GasPipeline("P1", "1", "99", 1.0),))
    issues = validate_system(sys)
    assert any("unresolved gas node 99" in s for s in issues)


def test_inverted_well_bounds_are_reported():
    sys = small_system(wells=(GasWell("W1", "1", 5.0, 3.0, 1.0),))
    assert any("inverted" in s and "W1" in s for s in validate_system(sys))


def test_duplicates_and_disconnected_network():
    sys = small_system(power_nodes=(PowerNode("1", -1, 1, "A"), PowerNode("1", -1, 1, "A"), PowerNode("2", -1, 1, "A")))
    assert any("duplicate power node id 1" in s for s in validate_system(sys))
    sys = small_system(power_nodes=small_system().power_nodes + (PowerNode("3", -1, 1, "A"),))
    assert any("not connected" in s for s in validate_system(sys))


def test_missing_region_only_when_required():
    sys = small_system(power_nodes=(PowerNode("1", -0.5, 0.5), PowerNode("2", -0.5, 0.5)))
    assert validate_system(sys, require_regions=False) == []
    assert any("no region" in s for s in validate_system(sys))


def test_id_key_is_natural():
    assert sorted(["10", "9", "L10", "L9", "L1"], key=id_key) == ["9", "10", "L1", "L9", "L10"]


@pytest.mark.parametrize(
    "w,g,dpi,expected",
    [(1.0, 2.0, 4.0, 0.0), (1.0, 2.0, -4.0, 0.0), (1.0, 2.0, 0.0, 4.0), (1.0, -2.0, -4.0, 0.0), (2.0, 3.0, 1.0, 7.0)],
)
def test_weymouth_residual(w, g, dpi, expected):
    assert weymouth_residual(w, g, dpi, 0.0) == pytest.approx(expected)


def power_block(nodes, lines, coal=(), loads=(), gfg=(), base=1.0):
    return PowerBlock(0, "A", tuple(nodes), tuple(lines), tuple(coal), tuple(gfg), tuple(loads), base)


def test_dc_flow_row_substitution():
    blk = power_block([PowerNode("1", -1, 1), PowerNode("2", -1, 1)], [PowerLine("L", "1", "2", 0.1, 10.0)])
    m = power_block_constraints(blk)
    x = np.zeros(m.n)
    x[m.index("theta", "1")] = 0.05
    x[m.index("theta", "2")] = 0.03
    row = m.eq_labels.index("dcflow:L")
    a = m.a_eq.getrow(row).toarray().ravel()
    # the row is linear in p: solve it for p
    p_idx = m.index("p", "L")
    rest = a @ x - a[p_idx] * x[p_idx]
    assert (m.b_eq[row] - rest) / a[p_idx] == pytest.approx(0.2)


def test_single_node_balance_forces_generation():
    blk = power_block([PowerNode("1", 0, 0)], [], coal=[CoalGenerator("C", "1", 0, 100, 0.0, 1.0)], loads=[Load("D", "1", "power", 40.0)])
    m = power_block_constraints(blk)
    row = m.eq_labels.index(next(l for l in m.eq_labels if l.startswith("balance")))
    a = m.a_eq.getrow(row).toarray().ravel()
    assert a[m.index("pg", "C")] != 0
    assert m.b_eq[row] / a[m.index("pg", "C")] == pytest.approx(40.0)


def test_two_node_flow_into_load():
    from iegs.qp import ConvexBlockProblem, solve_block

    blk = power_block(
        [PowerNode("1", 0, 0), PowerNode("2", -1, 1)],
        [PowerLine("L", "1", "2", 0.1, 100.0)],
        coal=[CoalGenerator("C", "1", 0, 100, 0.01, 1.0)],
        loads=[Load("D", "2", "power", 30.0)],
        base=100.0,
    )
    m = power_block_constraints(blk)
    p = ConvexBlockProblem(m.hess + 1e-8 * np.eye(m.n), m.lin, m.const, m.a_eq, m.b_eq, m.a_in, m.b_in, m.lb, m.ub, m.parabolas)
    rep = solve_block(p, tol=1e-10)
    assert rep.x[m.index("p", "L")] == pytest.approx(30.0, abs=1e-5)
    assert rep.x[m.index("theta", "2")] == pytest.approx(-0.03, abs=1e-7)


def gas_block(nodes, pipes=(), comps=(), wells=(), loads=(), vgens=()):
    return GasBlock(1, tuple(nodes), tuple(pipes), tuple(comps), tuple(wells), tuple(vgens), tuple(loads))


def test_compressor_row_admits_ratio():
    blk = gas_block([GasNode("i", 1, 10), GasNode("j", 1, 10)], comps=[GasCompressor("K", "i", "j", 1.44, 10.0)])
    m = gas_block_constraints(blk, {})
    row = m.in_labels.index("compressor:K")
    a = m.a_in.getrow(row).toarray().ravel()
    x = np.zeros(m.n)
    x[m.index("pi", "i")] = 4.0
    for pj, ok in ((5.76, True), (5.77, False)):
        x[m.index("pi", "j")] = pj
        assert bool(a @ x <= m.b_in[row] + 1e-12) is ok


def test_gas_balance_with_well_and_virtual_generator():
    nodes = [GasNode("1", 1, 10), GasNode("2", 1, 10)]
    pipe = GasPipeline("P", "1", "2", 1.0)
    vg = GasFiredGenerator("G'", "x", "1", 0.0, 50.0, 2.0, True, "G")
    blk = gas_block(nodes, [pipe], wells=[GasWell("W", "1", 0, 100, 1.0)], loads=[Load("D", "1", "gas", 30.0)], vgens=[vg])
    rel = {"P": ech.build_ech(pipe, {"1": (1, 10), "2": (1, 10)})}
    m = gas_block_constraints(blk, rel)
    row = m.eq_labels.index(next(l for l in m.eq_labels if l.startswith("balance") and l.endswith(":1")))
    a = m.a_eq.getrow(row).toarray().ravel()
    x = np.zeros(m.n)
    x[m.index("gw", "W")] = 50.0
    x[m.index("gv", "G'")] = 0.0
    # with no generator output the pipeline carries well minus load
    flow = (m.b_eq[row] - a @ x) / a[m.index("gl", "P")]
    assert flow == pytest.approx(20.0)
    # 10 MW of virtual generation adds chi * 10 = 20 of gas demand
    x[m.index("gv", "G'")] = 10.0
    flow = (m.b_eq[row] - a @ x) / a[m.index("gl", "P")]
    assert flow == pytest.approx(0.0)


def test_balance_residuals_one_node():
    sys = IegsSystem(
        power_nodes=(PowerNode("1", 0, 0),),
        coal_generators=(CoalGenerator("C", "1", 0, 100, 0, 1),),
        loads=(Load("D", "1", "power", 40.0),),
    )
    assert balance_residuals(sys, Dispatch(p_coal={"C": 40.0}))[("power", "1")] == 0.0
    assert balance_residuals(sys, Dispatch(p_coal={"C": 35.0}))[("power", "1")] == pytest.approx(-5.0)


def test_centralized_solution_balances(two_block, two_block_cf, two_block_central):
    d = two_block_cf.dispatch(two_block_central.xs)
    res = balance_residuals(two_block, d)
    assert max(abs(v) for v in res.values()) <= 1e-6
    assert d.objective(two_block) == pytest.approx(two_block_central.objective, rel=1e-12)
