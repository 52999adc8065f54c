import pytest

from sbprof import sbpl, vocab


@pytest.fixture(scope="session")
def small():
    return vocab.load_builtin("small")


@pytest.fixture(scope="session")
def large():
    return vocab.load_builtin("large")


@pytest.fixture(scope="session")
def implicit_rules():
    return sbpl.parse_implicit_rules(
        vocab.implicit_rules_path().read_text(encoding="utf-8"))
