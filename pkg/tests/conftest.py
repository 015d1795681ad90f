import pathlib

import pytest

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "fixtures"


@pytest.fixture(scope="session")
def fixtures_dir():
    return FIXTURES


@pytest.fixture(scope="session")
def lane_change_csv():
    return FIXTURES / "lanechange_3p5x65.csv"


@pytest.fixture(scope="session")
def scenario1_json():
    return FIXTURES / "scenario1.json"


@pytest.fixture(scope="session")
def scenario2_json():
    return FIXTURES / "scenario2.json"
