import os
from pathlib import Path

import pytest

from config.settings import settings
from database import db_manager
from services.matpower_parser import load_case, parse_case, to_network

DATA_DIR = Path(__file__).resolve().parent.parent / 'data'
CASE5_PATH = DATA_DIR / 'cases' / 'pglib_opf_case5_pjm.m'
REFERENCE_COSTS = DATA_DIR / 'reference_costs.csv'

TWO_BUS = """
function mpc = two_bus
mpc.version = '2';
mpc.baseMVA = 100;

%% bus data
mpc.bus = [
	1	3	0	0	0	0	1	1.0	0	230	1	1.1	0.9;
	2	1	50	10	0	0	1	1.0	0	230	1	1.1	0.9;
];

%% generator data
mpc.gen = [
	1	50	0	100	-100	1.0	100	1	200	0;
];

%% generator cost data
mpc.gencost = [
	2	0	0	3	0.01	10	5;
];

%% branch data
mpc.branch = [
	1	2	0.01	0.1	0.02	100	100	100	0	0	1	-360	360;
];
"""

THREE_BUS = """
function mpc = three_bus
mpc.version = '2';
mpc.baseMVA = 100;

mpc.bus = [
	1	3	0	0	0	0	1	1.0	0	230	1	1.1	0.9;
	2	2	0	0	0	0	1	1.0	0	230	1	1.1	0.9;
	3	1	90	30	0	0	1	1.0	0	230	1	1.1	0.9;
];

mpc.gen = [
	1	50	0	100	-100	1.0	100	1	150	0;
	2	45	0	100	-100	1.0	100	1	150	0;
];

mpc.gencost = [
	2	0	0	3	0.02	20	0;
	2	0	0	3	0.01	25	0;
];

mpc.branch = [
	1	2	0.01	0.08	0.02	100	100	100	0	0	1	-360	360;
	1	3	0.02	0.12	0.03	80	80	80	0	0	1	-360	360;
	2	3	0.015	0.1	0.025	80	80	80	0	0	1	-360	360;
];
"""


def pglib_case_path(name: str) -> Path:
    """
    Path of a PGLib-OPF case in the checkout named by PGLIB_OPF_DIR, or skip
    """
    root = os.getenv('PGLIB_OPF_DIR')
    if not root:
        pytest.skip("PGLIB_OPF_DIR is not set")
    path = Path(root) / f"pglib_opf_{name}.m"
    if not path.exists():
        pytest.skip(f"{path} not found")
    return path


@pytest.fixture
def two_bus_text():
    return TWO_BUS


@pytest.fixture
def two_bus():
    return to_network(parse_case(TWO_BUS))


@pytest.fixture
def three_bus():
    return to_network(parse_case(THREE_BUS))


@pytest.fixture(scope='session')
def case5():
    return load_case(CASE5_PATH)


@pytest.fixture
def case5_path():
    return CASE5_PATH


@pytest.fixture
def reference_costs():
    return REFERENCE_COSTS


@pytest.fixture
def history_db(tmp_path, monkeypatch):
    """
    Point the shared history database at a file under tmp_path
    """
    previous = db_manager.url
    url = f"sqlite:///{tmp_path / 'history.db'}"
    monkeypatch.setenv('DATABASE_URL', url)
    monkeypatch.setitem(settings.DATABASE_CONFIG, 'url', url)
    db_manager.configure(url)
    yield tmp_path / 'history.db'
    db_manager.configure(previous)
