import pytest

from tabret.corpus import Table, TableCell
from tabret.fixtures import FixtureScale, generate, write_fixtures


def make_table(tid="t1", rows=(), headings=(), **kw) -> Table:
    body = tuple(
        tuple(c if isinstance(c, TableCell) else TableCell(*c) if isinstance(c, tuple) else TableCell(c) for c in row)
        for row in rows
    )
    return Table(tid, headings=tuple(headings), body=body, **kw)


@pytest.fixture(scope="session")
def fixture_paths(tmp_path_factory):
    out = tmp_path_factory.mktemp("fixtures")
    return write_fixtures(generate(FixtureScale(), 42), out, 42)


@pytest.fixture(scope="session")
def resources(fixture_paths):
    from tabret.pipeline import load_resources

    return load_resources({k: v for k, v in fixture_paths.items() if k != "config"})


@pytest.fixture(scope="session")
def mlm_weights(resources):
    from tabret.pipeline import train_mlm_weights

    return train_mlm_weights(resources)


@pytest.fixture(scope="session")
def feature_matrix(resources, mlm_weights):
    from tabret.pipeline import extract_features

    return extract_features(resources, mlm_weights)
