import pathlib

import pytest

from pmlsem import syntax as syn

FIXTURES = pathlib.Path(__file__).parent / "fixtures"

FIXTURE_NAMES = [
    "peterson", "prodcons_cap1", "prodcons_cap2", "pingpong",
    "selector", "gotoloop", "runchain",
]


def fixture_source(name: str) -> str:
    return (FIXTURES / f"{name}.pml").read_text()


def load_fixture(name: str) -> syn.Program:
    return syn.normalize(syn.parse_program(fixture_source(name)))


@pytest.fixture
def peterson() -> syn.Program:
    return load_fixture("peterson")
