import sys
from pathlib import Path

import pytest

sys.path.insert(0, str(Path(__file__).parent))

DATA = Path(__file__).parent / "data"


@pytest.fixture
def bikeshare_path():
    return DATA / "bikeshare_2011_hour.csv"
