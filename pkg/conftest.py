"""Top-level pytest configuration.

Adds ``--runslow``; tests marked ``slow`` (large grids, scaling benchmark,
phenology recovery over hundreds of parcels) are skipped without it.
"""

from __future__ import annotations

import pytest


def pytest_addoption(parser: pytest.Parser) -> None:
    group = parser.getgroup("agricube")
    group.addoption(
        "--runslow",
        action="store_true",
        default=False,
        help="Also run tests marked slow (large-scale acceptance runs)",
    )


def pytest_collection_modifyitems(config: pytest.Config, items) -> None:
    if config.getoption("--runslow"):
        return
    skip = pytest.mark.skip(reason="slow: enable with --runslow")
    for item in items:
        if "slow" in item.keywords:
            item.add_marker(skip)


@pytest.fixture
def small_config():
    """Two seasons on a 32x32 grid; small enough to synthesize per test."""
    from agricube.grid import GridSpec
    from agricube.synthetic import MismatchSpec, SyntheticConfig

    return SyntheticConfig(
        grid=GridSpec(500000.0, 4000000.0, 32, 32, 10.0),
        n_parcels=12,
        start="2019-01-01",
        end="2021-01-01",
        cloud_probability=0.15,
        mismatches=(MismatchSpec(declared="maize", actual="spring_cereal"),
                    MismatchSpec(declared="maize", actual="winter_cereal")),
        seed=11,
    )


@pytest.fixture(scope="session")
def demo_workspace(tmp_path_factory):
    """Read-only synthesized workspace shared by query, scenario and CLI tests."""
    from agricube.grid import GridSpec
    from agricube.synthetic import MismatchSpec, SyntheticConfig
    from agricube.workspace import synthesize

    cfg = SyntheticConfig(
        grid=GridSpec(500000.0, 4000000.0, 32, 32, 10.0),
        n_parcels=12,
        start="2019-01-01",
        end="2021-01-01",
        cloud_probability=0.15,
        mismatches=(MismatchSpec(declared="maize", actual="spring_cereal"),
                    MismatchSpec(declared="maize", actual="winter_cereal")),
        seed=11,
    )
    root = tmp_path_factory.mktemp("demo") / "ws"
    return synthesize(root, cfg, tile_size=16)
