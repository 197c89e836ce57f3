import numpy as np
import pytest

from agra.gradcheck import TOLERANCE, GroupReport, relative_error, run_gradcheck
from agra.model import FORWARD_MODES

GROUPS = ["extractor", "W_intra_0", "W_intra_1", "W_inter_0", "A_intra", "A_inter", "classifier", "discriminator"]


def test_default_suite_passes_every_group():
    reports = run_gradcheck(seed=0)
    assert [r.group for r in reports] == GROUPS
    assert all(r.passed and r.n_entries > 0 for r in reports)


def test_mlp_extractor():
    reports = run_gradcheck(seed=1, extractor="mlp")
    assert all(r.passed for r in reports)


@pytest.mark.parametrize("mode", FORWARD_MODES)
def test_every_forward_mode(mode):
    reports = run_gradcheck(seed=2, mode=mode)
    assert reports and all(r.passed for r in reports)


def test_coarse_step_is_reported_as_failure():
    assert not all(r.passed for r in run_gradcheck(seed=0, step=1.0))


def test_relative_error_floor_and_threshold():
    assert relative_error(np.zeros(3), np.zeros(3)) == 0.0
    assert relative_error(np.array([1.0]), np.array([1.0 + 1e-6])) == pytest.approx(1e-6, rel=1e-3)
    assert not GroupReport("g", 1, TOLERANCE).passed
