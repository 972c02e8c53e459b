import numpy as np
import pytest

from v2vforge.model import ModelConfig, init_params
from v2vforge.model.editor import backbone_names


def trained_like(cfg, seed=0, scale=0.2):
    """Fresh params with every backbone tensor randomized, as if pretrained.

    Zero-initialized heads would make many checks trivially pass; this keeps the
    conditioning routes at zero while the backbone is fully active.
    """
    params = init_params(cfg, seed)
    gen = np.random.default_rng(seed + 100)
    for k in backbone_names(params):
        params[k] = (params[k] + scale * gen.standard_normal(params[k].shape)).astype(params[k].dtype)
    return params


@pytest.fixture
def tiny_cfg():
    return ModelConfig(width=24, depth=2, heads=2, lora_rank=2, lora_alpha=4.0)


ACCEPTANCE = {}


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for num in sorted(ACCEPTANCE):
        ok, title, detail = ACCEPTANCE[num]
        terminalreporter.write_line(f"[{'PASS' if ok else 'FAIL'}] C{num:02d} {title}: {detail}")
