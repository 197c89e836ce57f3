import numpy as np
import pytest

from agra.synth import SyntheticShiftConfig, generate

TINY = SyntheticShiftConfig(n_classes=3, raw_dim=6, n_source=60, n_target=60, class_scale=2.0, noise_std=0.5,
                            rotation_angle=np.pi / 4, rotated_planes=2, global_bias_norm=1.0, region_bias_norm=0.5,
                            seed=3)


@pytest.fixture
def tiny_pair():
    return generate(TINY)


def tiny_model_config(**kw):
    from agra.model import ModelConfig

    base = dict(raw_dim=6, n_classes=3, node_dim=4, hidden_dim=6, disc_hidden=(5, 4))
    base.update(kw)
    return ModelConfig(**base)


def pytest_terminal_summary(terminalreporter):
    import sys

    acceptance = sys.modules.get("test_acceptance")
    if acceptance is None or not acceptance.RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(acceptance.RESULTS):
        terminalreporter.write_line(acceptance.RESULTS[number])
