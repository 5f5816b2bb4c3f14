from __future__ import annotations

import numpy as np
import pytest

from uavmfg.config import config_from_dict

# criterion id -> (passed, detail); filled by tests/test_acceptance.py
ACCEPTANCE: dict[int, tuple[bool, str]] = {}


def record_acceptance(number: int, name: str, passed: bool, detail: str) -> None:
    ACCEPTANCE[number] = (bool(passed), f"{name}: {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        passed, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"[{'PASS' if passed else 'FAIL'}] criterion {number:2d} {detail}")


def base_doc(**overrides) -> dict:
    doc = {
        "domain": {"min": [0.0, 0.0, 0.0], "max": [1.0, 1.0, 1.0]},
        "grid": {"shape": [8, 8, 8]},
        "target": {"center": [0.5, 0.5, 0.5], "radius": 0.15},
        "obstacles": [],
        "wind": {"type": "none"},
        "fd": {"v_max0": 1.0, "v_min": 0.2, "rho_jam": 1.0, "beta": 20.0, "clip_lo": 0.2, "clip_hi": 1.0},
        "eps_reg": 0.001,
        "eps_c": 0.05,
        "source": {"type": "homing", "rate_density": 0.01},
        "transport": {"kappa": 0.0, "cfl": 0.9, "max_iters": 20000, "tol_rel": 1e-8},
        "picard": {"alpha": 0.5, "rho_max": 0.8, "max_outer": 5, "rho_change_tol": 1e-3},
        "value_solver": {"backend": "fsm"},
        "seed": 0,
    }
    doc.update(overrides)
    return doc


@pytest.fixture
def make_cfg():
    def _make(**overrides):
        return config_from_dict(base_doc(**overrides))

    return _make


@pytest.fixture
def rng():
    return np.random.default_rng(12345)
