import numpy as np
import pytest

from qss.quantum import MeasBasis, Sign, SourceBasis, SourceSetting

# Pauli-operator oracle, independent of the eigenstate constructors
I2 = np.eye(2)
PAULI = {MeasBasis.D: np.array([[0, 1], [1, 0]], dtype=complex), MeasBasis.C: np.array([[0, -1j], [1j, 0]])}


def pauli_projector(basis: MeasBasis, sign: Sign) -> np.ndarray:
    return (I2 + sign.pm * PAULI[basis]) / 2


def oracle_joint(rho: np.ndarray, A: MeasBasis, B: MeasBasis) -> dict:
    out = {}
    for a in Sign:
        for b in Sign:
            out[(a, b)] = float(np.trace(rho @ np.kron(pauli_projector(A, a), pauli_projector(B, b))).real)
    return out


ALL_SETTINGS = [SourceSetting(S, s) for S in SourceBasis for s in Sign]


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


def pytest_terminal_summary(terminalreporter):
    try:
        from test_acceptance import RESULTS
    except ImportError:
        return
    if not RESULTS:
        return
    terminalreporter.section("acceptance criteria")
    for name in sorted(RESULTS):
        ok, detail = RESULTS[name]
        terminalreporter.write_line(f"{'PASS' if ok else 'FAIL'}  {name}: {detail}")
