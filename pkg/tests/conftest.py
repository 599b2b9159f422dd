from __future__ import annotations

import functools

import pytest

from gaugepeps.analysis import WilsonTable
from gaugepeps.engine import Contraction, LoopSpec, TorusSpec, wilson_exact
from gaugepeps.tensor import Z2Params, build_z2_tensor

ACCEPTANCE_LINES: list[str] = []

CONFINING = (1.0, 0.1, 0.0, 0.95)
DEGENERATE = (1.0, 0.1, 0.0, 1.0)
NONPERTURBATIVE = (0.1, 0.1, 1.0, 0.3)
PERTURBATIVE = (1.0, 0.05, 0.0, 0.9)


@functools.lru_cache(maxsize=None)
def scenario(params: tuple, N1: int = 8, N2: int = 100, r_max: int = 7):
    """Tensor, contraction context and exact Wilson table for one parameter set."""
    tensor = build_z2_tensor(Z2Params(*params))
    ctx = Contraction(tensor, N1)
    torus = TorusSpec(N1, N2)
    table = WilsonTable()
    for a in range(1, r_max + 1):
        for b in range(1, r_max + 1):
            table.add(a, b, wilson_exact(tensor, torus, LoopSpec(a, b), ctx=ctx))
    return tensor, ctx, table


def record_acceptance(number: int, ok: bool, detail: str) -> None:
    line = f"acceptance {number:>2}: {'PASS' if ok else 'FAIL'}  {detail}"
    ACCEPTANCE_LINES.append(line)
    print(line)


@pytest.fixture
def acceptance():
    return record_acceptance


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE_LINES:
        return
    terminalreporter.section("acceptance criteria")
    for line in ACCEPTANCE_LINES:
        terminalreporter.write_line(line)
