"""Bundled fixture netlists: divider, rc_filter, rlc, rectifier and boost."""

from importlib import resources

from ..netlist import Circuit, parse_netlist

FIXTURES = ("divider", "rc_filter", "rlc", "rectifier", "boost")


def fixture_text(name: str) -> str:
    if name not in FIXTURES:
        raise KeyError(f"unknown fixture {name!r}; choose from {', '.join(FIXTURES)}")
    return resources.files(__name__).joinpath(f"{name}.cir").read_text(encoding="utf-8")


def load_fixture(name: str) -> Circuit:
    return parse_netlist(fixture_text(name))
