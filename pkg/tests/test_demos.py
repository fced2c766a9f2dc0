import runpy
from pathlib import Path

import pytest

DEMOS = Path(__file__).resolve().parent.parent / "demos"


@pytest.mark.parametrize("name,expected", [
    ("soft_beliefs.py", "seeds with Q*(phi0) > 0.99 at J = 500"),
    ("gaussian_meta_analysis.py", "study  reported mean  updated mean"),
])
def test_demo_runs(name, expected, capsys):
    runpy.run_path(str(DEMOS / name), run_name="__main__")
    assert expected in capsys.readouterr().out
