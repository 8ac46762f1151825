import pytest

from iegs import fixtures
from iegs.io import NetworkFormatError, ResultReport, dump_network, load_network, parse_network, read_report, save_network, write_report

MINIMAL = """\
format: iegs-network
version: 1
units: {power: MW}
power_nodes:
  - {id: '1', theta_min: 0, theta_max: 0}
coal_generators:
  - {id: C1, node: '1', p_min: 0, p_max: 100, c1: 0.01, c2: 20}
loads:
  - {id: D1, node: '1', kind: power, amount: 40}
"""


def test_minimal_file_loads():
    sys = parse_network(MINIMAL)
    assert len(sys.power_nodes) == 1 and sys.coal_generators[0].p_max == 100
    assert sys.loads[0].amount == 40
    assert sys.base_mva == 100


@pytest.mark.parametrize("make", [fixtures.two_block, fixtures.four_block])
def test_round_trip(make, tmp_path):
    sys = make()
    a, b = tmp_path / "a.yaml", tmp_path / "b.yaml"
    save_network(sys, a)
    again = load_network(a)
    assert again == sys
    save_network(again, b)
    assert a.read_bytes() == b.read_bytes()


def test_shipped_data_matches_fixtures():
    from importlib.resources import files

    for name, make in (("two_block", fixtures.two_block), ("four_block", fixtures.four_block)):
        text = files("iegs").joinpath(f"data/{name}.yaml").read_text()
        assert text == dump_network(make())


def test_duplicate_id_names_id_and_line():
    text = MINIMAL.replace(
        "  - {id: C1, node: '1', p_min: 0, p_max: 100, c1: 0.01, c2: 20}\n",
        "  - {id: C1, node: '1', p_min: 0, p_max: 100, c1: 0.01, c2: 20}\n  - {id: C1, node: '1', p_min: 0, p_max: 50, c1: 0.01, c2: 20}\n",
    )
    with pytest.raises(NetworkFormatError, match="duplicate id 'C1'") as ei:
        parse_network(text, "net.yaml")
    assert ei.value.line == 8
    assert str(ei.value).startswith("net.yaml:8:")


def test_unknown_field_has_position():
    text = MINIMAL.replace("amount: 40", "amount: 40, colour: red")
    with pytest.raises(NetworkFormatError, match="colour") as ei:
        parse_network(text)
    assert ei.value.line == 9


def test_unit_mismatch():
    with pytest.raises(NetworkFormatError, match="unit of power"):
        parse_network(MINIMAL.replace("power: MW", "power: kW"))


@pytest.mark.parametrize(
    "edit, msg",
    [
        (("format: iegs-network", "format: other"), "format"),
        (("version: 1", "version: 7"), "version"),
        (("loads:", "lodes:"), "unknown section"),
        (("amount: 40", "amount: forty"), "amount"),
        (("node: '1', kind", "node: '9', kind"), "9"),
        (("p_max: 100", "p_max: -5"), "C1"),
    ],
)
def test_malformed(edit, msg):
    with pytest.raises(NetworkFormatError, match=msg):
        parse_network(MINIMAL.replace(*edit))


def test_not_yaml_reports_line():
    with pytest.raises(NetworkFormatError, match="not valid YAML") as ei:
        parse_network(MINIMAL + "  - {id: [\n")
    assert ei.value.line is not None


def test_regions_cannot_hold_gas_nodes():
    text = MINIMAL + "gas_nodes:\n  - {id: g1, pi_min: 1, pi_max: 2}\nregions:\n  A: ['1', g1]\n"
    with pytest.raises(NetworkFormatError, match="gas node"):
        parse_network(text)


def test_missing_file():
    with pytest.raises(NetworkFormatError, match="cannot read"):
        load_network("/nonexistent/net.yaml")


def test_report_round_trip(tmp_path):
    rep = ResultReport(network="n", mode="jacobi", status="converged", objective=1.5, iterations=3, slack_objective=float("inf"))
    path = tmp_path / "r.json"
    write_report(rep, path)
    back = read_report(path)
    assert back["objective"] == 1.5 and back["iterations"] == 3
    assert back["slack_objective"] is None
