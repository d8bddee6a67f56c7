import importlib.util
from pathlib import Path
from types import SimpleNamespace

import pytest

SCRIPT = Path(__file__).parent / "scripts" / "desk_acceptance.py"


@pytest.fixture(scope="module")
def acceptance():
    spec = importlib.util.spec_from_file_location("desk_acceptance", SCRIPT)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def _finals(ref_free_coverage=0.2, ref_free_diversity=0.3):
    def runs(coverage, diversity, goal_switches=0):
        return [SimpleNamespace(coverage=coverage, diversity=diversity, goal_switches=goal_switches)] * 2

    return {
        "manual": runs(0.3, 0.1),
        "pca_static": runs(0.5, 0.4, goal_switches=10),
        "pca_dynamic": runs(0.4, 0.4, goal_switches=40),
        "pca_dynamic_multi": runs(0.4, 0.5, goal_switches=40),
        "ref_free": runs(ref_free_coverage, ref_free_diversity),
    }


def test_reference_free_regime_is_part_of_the_comparison(acceptance):
    assert acceptance.CONFIGS["ref_free"]["fitness"]["regime"] == "ref_free"


def test_orderings_pass(acceptance, capsys):
    assert acceptance.check(_finals())
    out = capsys.readouterr().out
    assert "PASS  diversity(ref-free) > 0" in out
    assert "PASS  coverage(ref-free) > 0.05" in out


@pytest.mark.parametrize("coverage,diversity,failed", [
    (0.04, 0.3, "coverage(ref-free)"),
    (0.05, 0.3, "coverage(ref-free)"),
    (0.2, 0.0, "diversity(ref-free)"),
])
def test_reference_free_thresholds(acceptance, capsys, coverage, diversity, failed):
    assert not acceptance.check(_finals(coverage, diversity))
    assert f"FAIL  {failed}" in capsys.readouterr().out
