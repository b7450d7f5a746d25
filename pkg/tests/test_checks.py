import json

import pytest

from radarforge.checks import PROPERTIES, PropertyResult, run_fusion_checks
from radarforge.core import ValidationError


def test_default_run_passes():
    results = run_fusion_checks()
    assert all(r.passed for r in results), [r for r in results if not r.passed]
    assert [r.name for r in results] == [name for name, _ in PROPERTIES]


def test_property_names_are_unique():
    names = [name for name, _ in PROPERTIES]
    assert len(names) == len(set(names)) == 12


@pytest.mark.parametrize("seed", range(10))
def test_every_seed_passes(seed):
    assert all(r.passed for r in run_fusion_checks(seed=seed))


def test_odd_sizes_pass():
    assert all(r.passed for r in run_fusion_checks(seed=1, sizes=(5, 7)))


def test_zero_tolerance_fails_inexact_properties():
    results = {r.name: r for r in run_fusion_checks(tolerance_scale=0.0)}
    assert not results["scan_kernel_duality"].passed
    assert results["channel_bijection"].passed
    assert results["complementary_gating"].passed


def test_results_serialize_as_json_lines():
    result = PropertyResult("softmax_rows", 1e-17, 1e-12, True)
    assert json.loads(result.to_json()) == {"error": 1e-17, "name": "softmax_rows", "passed": True, "tolerance": 1e-12}


def test_argument_checks():
    with pytest.raises(ValidationError):
        run_fusion_checks(sizes=(0, 8))
    with pytest.raises(ValidationError):
        run_fusion_checks(tolerance_scale=-1.0)
