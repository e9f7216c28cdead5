from __future__ import annotations

import numpy as np
import pytest

from weakbandit.sim import EpisodeUniforms


def fixed_uniforms(n_arms: int, plays: int, coin=0.0, keep=0.0, play=0.5) -> EpisodeUniforms:
    return EpisodeUniforms(np.full(n_arms, coin), np.full(n_arms, keep), np.full((n_arms, plays), play))


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


ACCEPTANCE_LINES: list[str] = []


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"criterion {number:2d}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in sorted(ACCEPTANCE_LINES):
            terminalreporter.write_line(line)
