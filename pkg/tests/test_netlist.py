import pytest
from hypothesis import given
from hypothesis import strategies as st

from tfha import (
    Circuit,
    list_parameters,
    load_fixture,
    parse_netlist,
    resolve_parameters,
    to_netlist,
    validate_circuit,
)
from tfha.circuits import FIXTURES
from tfha.exceptions import DuplicateName, NetlistSyntaxError, UnknownDeviceKind, UnknownParameter
from tfha.netlist import Kind, Pulse, Pwm, Sin, parse_value


def rules(diags):
    return [(d.rule, d.subject) for d in diags]


class TestParse:
    def test_resistor_card(self):
        c = parse_netlist("t\nR1 1 0 100\n")
        (dev,) = c.devices
        assert dev.name == "R1" and dev.kind is Kind.RESISTOR
        assert dev.terminals == ("1", "0")
        assert dev.params["value"] == 100.0

    def test_capacitor_suffix(self):
        c = parse_netlist("t\nC1 2 0 1u\n")
        assert c.devices[0].params["value"] == 1e-6

    def test_duplicate_name(self):
        with pytest.raises(DuplicateName) as err:
            parse_netlist("t\nR1 1 0 100\nR1 1 0 100\n")
        assert err.value.lineno == 3

    def test_duplicate_name_case_insensitive(self):
        with pytest.raises(DuplicateName):
            parse_netlist("t\nR1 1 0 100\nr1 1 0 100\n")

    @pytest.mark.parametrize("card", ["Q1 1 2 3 model", "M1 d g s b nmos", "X1 1 2 sub"])
    def test_unsupported_cards_are_errors(self, card):
        with pytest.raises(UnknownDeviceKind):
            parse_netlist(f"t\n{card}\n")

    @pytest.mark.parametrize("line", [".tran 1u 1m", ".model D D"])
    def test_unsupported_directives_are_errors(self, line):
        with pytest.raises(NetlistSyntaxError):
            parse_netlist(f"t\nR1 1 0 1\n{line}\n")

    def test_malformed_value(self):
        with pytest.raises(NetlistSyntaxError):
            parse_netlist("t\nR1 1 0 12q\n")

    @pytest.mark.parametrize(
        "token,value",
        [("1k", 1e3), ("2.2u", 2.2e-6), ("47n", 47e-9), ("3meg", 3e6), ("5m", 5e-3),
         ("1p", 1e-12), ("-1.5e3", -1500.0), (".5", 0.5)],
    )
    def test_parse_value_suffixes(self, token, value):
        assert parse_value(token) == value

    def test_every_production(self):
        text = (
            "all cards\n"
            "* comment line\n"
            "V1 in 0 SIN(0 1 1k 0)\n"
            "V2 b 0 PULSE(0 5 0 1u 1u 10u 20u)\n"
            "V3 c 0 DC 2\n"
            "I1 0 c 1m ; inline comment\n"
            "R1 in a 1k\n"
            "C1 a 0 1n\n"
            "L1 a b 1m\n"
            "D1 a c IS=1e-12 N=1.5\n"
            "S1 b c RON=1 ROFF=1meg PWM(0.5 20u 1u 1u)\n"
            ".period 1m\n"
            ".end\n"
            "R9 ignored after end 1\n"
        )
        c = parse_netlist(text)
        assert [d.name for d in c.devices] == ["V1", "V2", "V3", "I1", "R1", "C1", "L1", "D1", "S1"]
        assert c.fundamental_period == 1e-3
        assert isinstance(c.devices[0].waveform, Sin)
        assert isinstance(c.devices[1].waveform, Pulse)
        assert isinstance(c.devices[8].waveform, Pwm)
        assert c.devices[7].params["n"] == 1.5
        assert validate_circuit(c) == []

    def test_period_defaults_to_longest_source(self):
        c = parse_netlist("t\nV1 1 0 SIN(0 1 50)\nR1 1 0 1\n")
        assert c.fundamental_period == pytest.approx(0.02)


class TestValidate:
    @pytest.mark.parametrize("name", FIXTURES)
    def test_fixtures_are_clean(self, name):
        assert validate_circuit(load_fixture(name)) == []

    def test_floating_node(self):
        c = parse_netlist("t\nV1 1 0 DC 1\nR1 1 0 1k\nR2 5 6 1k\n")
        assert ("FloatingNode", "5") in rules(validate_circuit(c))

    def test_exactly_one_floating_node(self):
        c = parse_netlist("t\nV1 1 0 DC 1\nR1 1 0 1k\nC5 5 5 1n\n")
        assert rules(validate_circuit(c)) == [("FloatingNode", "5")]

    def test_diode_zero_saturation_current(self):
        c = parse_netlist("t\nV1 1 0 DC 1\nD1 1 0 IS=0\n")
        assert rules(validate_circuit(c)) == [("NonPositiveParameter", "D1")]

    def test_diode_emission_below_one(self):
        c = parse_netlist("t\nV1 1 0 DC 1\nD1 1 0 N=0.5\n")
        assert rules(validate_circuit(c)) == [("InvalidParameter", "D1")]

    def test_negative_resistor(self):
        c = parse_netlist("t\nV1 1 0 DC 1\nR1 1 0 -5\n")
        assert rules(validate_circuit(c)) == [("NonPositiveParameter", "R1")]

    def test_incommensurate_sources(self):
        c = parse_netlist("t\nV1 1 0 SIN(0 1 1k)\nV2 2 0 SIN(0 1 1.5k)\nR1 1 2 1\n.period 1m\n")
        assert ("Incommensurate", "V2") in rules(validate_circuit(c))

    def test_commensurate_harmonic_source(self):
        c = parse_netlist("t\nV1 1 0 SIN(0 1 1k)\nV2 2 0 SIN(0 1 3k)\nR1 1 2 1\n.period 1m\n")
        assert validate_circuit(c) == []

    def test_exact_rational_check(self):
        # a truncated decimal of 1/3 us does not divide 1 ms
        c = parse_netlist("t\nV1 1 0 PULSE(0 1 0 1n 1n 10n 0.333333333333u)\nR1 1 0 1\n.period 1m\n")
        assert ("Incommensurate", "V1") in rules(validate_circuit(c))


class TestParameters:
    def test_rectifier(self):
        c = load_fixture("rectifier")
        assert [str(p) for p in list_parameters(c)] == ["R1.value", "C1.value"]

    def test_source_only(self):
        assert list_parameters(parse_netlist("t\nV1 1 0 DC 1\n")) == []

    def test_boost_parasitics(self):
        names = {p.device_name for p in list_parameters(load_fixture("boost"))}
        assert {"L1", "R1", "R2", "R3", "R4", "L2", "L3", "L4", "C"} <= names
        assert "SM" in names

    def test_resolve(self):
        c = load_fixture("rectifier")
        assert resolve_parameters(c, "all") == list_parameters(c)
        (p,) = resolve_parameters(c, "r1.value")
        assert p.device_name == "R1" and p.nominal_value == 1000.0
        with pytest.raises(UnknownParameter):
            resolve_parameters(c, ["R7.value"])
        with pytest.raises(UnknownParameter):
            resolve_parameters(c, ["R1.nope"])


value = st.floats(1e-9, 1e9, allow_nan=False, allow_infinity=False)


@st.composite
def circuits(draw):
    n_nodes = draw(st.integers(1, 4))
    nodes = ["0"] + [f"n{i}" for i in range(1, n_nodes + 1)]
    pair = st.tuples(st.sampled_from(nodes), st.sampled_from(nodes))
    period = draw(st.sampled_from([1e-3, 1e-6, 2.5e-5]))
    cards = []
    for i in range(draw(st.integers(1, 6))):
        a, b = draw(pair)
        kind = draw(st.sampled_from("RCLVIDS"))
        name = f"{kind}{i}"
        if kind in "RCL":
            cards.append(f"{name} {a} {b} {draw(value)!r}")
        elif kind in "VI":
            wf = draw(st.sampled_from(["dc", "sin", "pulse"]))
            if wf == "dc":
                cards.append(f"{name} {a} {b} DC {draw(value)!r}")
            elif wf == "sin":
                cards.append(f"{name} {a} {b} SIN({draw(value)!r} {draw(value)!r} "
                             f"{1 / period!r} {draw(st.floats(-180, 180))!r})")
            else:
                cards.append(f"{name} {a} {b} PULSE(0 {draw(value)!r} 0 "
                             f"{period / 10!r} {period / 10!r} {period / 4!r} {period!r})")
        elif kind == "D":
            cards.append(f"{name} {a} {b} IS={draw(value)!r} N={draw(st.floats(1, 3))!r}")
        else:
            cards.append(f"{name} {a} {b} RON={draw(value)!r} ROFF={draw(value)!r} "
                         f"PWM({draw(st.floats(0.2, 0.8))!r} {period!r} {period / 20!r} {period / 20!r})")
    return "random\n" + "\n".join(cards) + f"\n.period {period!r}\n.end\n"


@given(circuits())
def test_round_trip(text):
    c = parse_netlist(text)
    again = parse_netlist(to_netlist(c))
    assert isinstance(again, Circuit)
    assert again == c
    assert to_netlist(again) == to_netlist(c)
