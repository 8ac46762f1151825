import numpy as np
import pytest
from dataclasses import replace

from iegs import centralized, partition
from iegs.model import (
    CoalGenerator,
    GasFiredGenerator,
    GasNode,
    GasPipeline,
    GasWell,
    IegsSystem,
    Load,
    PowerLine,
    PowerNode,
)
from iegs.partition import CouplingConstraint, ScalingPlan, assemble_compact, coupling_constraints, decouple, default_scaling


def tiny(regions=("A",), with_gfg=True):
    nodes = [PowerNode("1", 0, 0, regions[0]), PowerNode("2", -0.5, 0.5, regions[-1])]
    sys = IegsSystem(
        power_nodes=tuple(nodes),
        power_lines=(PowerLine("L1", "1", "2", 0.1, 100.0),),
        coal_generators=(CoalGenerator("C1", "1", 0, 100, 0.01, 20),),
        gas_fired_generators=(GasFiredGenerator("G1", "2", "a", 0, 50, 0.2),) if with_gfg else (),
        gas_nodes=(GasNode("a", 1, 10), GasNode("b", 1, 10)),
        pipelines=(GasPipeline("P1", "b", "a", 1.0),),
        wells=(GasWell("W1", "b", 0, 20, 5),),
        loads=(Load("D1", "2", "power", 30.0), Load("D2", "a", "gas", 1.0)),
    )
    return sys


def test_one_region_gives_two_blocks():
    part = decouple(tiny())
    assert part.n_blocks == 2
    assert len(part.virtual_nodes) == 0
    assert part.virtual_generators == {"G1'": "G1"}
    cc = coupling_constraints(part)
    assert [c.kind for c in cc] == ["gas"]


def test_two_regions_split_the_tie_line():
    part = decouple(tiny(("A", "B")))
    assert part.n_blocks == 3
    assert sorted(v.id for v in part.virtual_nodes) == ["1'", "2'"]
    assert {v.block for v in part.virtual_nodes} == {0, 1}
    cc = coupling_constraints(part)
    assert [c.kind for c in cc] == ["phase", "phase", "gas"]
    # each half keeps the full reactance
    for blk in part.blocks[:2]:
        assert [l.x for l in blk.lines] == [0.1]
    cf = assemble_compact(part)
    for i in range(cf.n_rows):
        nz = [int(A.getrow(i).nnz) for A in cf.A]
        assert sorted(nz) == [0, 1, 1]


def test_four_block_fixture_has_four_blocks(four_block):
    part = decouple(four_block)
    assert part.n_blocks == 4
    assert part.gas_index == 3
    assert [b.region for b in part.blocks[:3]] == ["1", "2", "3"]


def test_no_gas_fired_generators_means_no_coupling():
    part = decouple(tiny(with_gfg=False))
    assert coupling_constraints(part) == []
    cf = assemble_compact(part)
    assert cf.n_rows == 0


def test_errors():
    with pytest.raises(ValueError, match="gas node"):
        decouple(tiny(), {"1": "A", "2": "A", "a": "A"})
    with pytest.raises(ValueError, match="without region"):
        decouple(tiny(), {"1": "A"})
    bad = replace(tiny(), gas_fired_generators=(GasFiredGenerator("G1", "2", "zz", 0, 50, 0.2),))
    with pytest.raises(ValueError, match="zz"):
        decouple(bad)


def test_single_row_structure_and_scale():
    part = decouple(tiny())
    cc = coupling_constraints(part)
    cf = assemble_compact(part, cc, ScalingPlan((1.0,)))
    a0, a1 = (A.toarray() for A in cf.A)
    assert a0.shape == (1, cf.models[0].n) and a1.shape == (1, cf.models[1].n)
    assert sorted(a0.ravel()[a0.ravel() != 0]) == [1.0]
    assert sorted(a1.ravel()[a1.ravel() != 0]) == [-1.0]
    assert np.all(cf.c == 0)
    cf10 = assemble_compact(part, cc, ScalingPlan((10.0,)))
    assert sorted(np.concatenate([A.data for A in cf10.A])) == [-10.0, 10.0]
    xs = [cf10.initial_point(r) for r in range(2)]
    xs[0][cf10.models[0].index("gg", "G1")] = 7.0
    xs[1][cf10.models[1].index("gv", "G1'")] = 7.0
    assert cf10.coupling_residual(xs) == pytest.approx([0.0])
    xs[1][cf10.models[1].index("gv", "G1'")] = 6.5
    assert cf10.coupling_residual(xs)[0] / 10.0 == pytest.approx(0.5)


def test_unknown_variable_is_rejected():
    part = decouple(tiny())
    bad = [CouplingConstraint("gas", (0, "gg", "nope"), (1, "gv", "G1'"))]
    with pytest.raises(KeyError):
        assemble_compact(part, bad)
    same = [CouplingConstraint("gas", (0, "gg", "G1"), (0, "gg", "G1"))]
    with pytest.raises(ValueError):
        assemble_compact(part, same)


def test_default_scaling_examples():
    part = decouple(tiny(("A", "B")))
    cc = coupling_constraints(part)
    plan = default_scaling(part)
    by_node = {c.left[2]: f for c, f in zip(cc, plan.factors)}
    assert by_node["1"] == pytest.approx(1.0)  # zero bounds -> fallback
    assert by_node["2"] == pytest.approx(2.0)  # +-0.5 rad
    assert by_node["G1"] == pytest.approx(1 / 50)
    big = replace(tiny(), gas_fired_generators=(GasFiredGenerator("G1", "2", "a", 0, 200, 0.2),))
    assert default_scaling(decouple(big)).factors == (0.005,)


def test_partition_is_a_disjoint_cover(four_block):
    part = decouple(four_block)
    seen = {}
    for blk in part.blocks[:-1]:
        for n in blk.nodes:
            if not n.is_virtual:
                assert n.id not in seen
                seen[n.id] = blk.index
        for d in blk.loads:
            assert not d.node.endswith("'")
    assert set(seen) == {n.id for n in four_block.power_nodes}
    gens = [g.id for b in part.blocks[:-1] for g in b.coal_generators]
    assert sorted(gens) == sorted(g.id for g in four_block.coal_generators)
    cf = assemble_compact(part)
    # virtual nodes carry no balance rows
    for r, m in enumerate(cf.models[:-1]):
        assert not any(l.startswith("balance") and l.endswith("'") for l in m.eq_labels)


@pytest.mark.parametrize("which", ["two_block", "four_block"])
def test_partitioned_equals_unpartitioned(which, request):
    cf = request.getfixturevalue(which + "_cf")
    a = centralized.solve_centralized(cf)
    b = centralized.solve_monolithic(cf)
    assert a.ok and b.ok
    assert a.objective == pytest.approx(b.objective, rel=1e-6)


def test_price_scale_is_a_power_of_two(two_block_cf, four_block_cf):
    for cf in (two_block_cf, four_block_cf):
        assert np.log2(cf.cost_scale) == int(np.log2(cf.cost_scale))
    assert four_block_cf.cost_scale > two_block_cf.cost_scale
