import sys
import warnings
from functools import lru_cache
from pathlib import Path

import numpy as np
import pytest

sys.path.insert(0, str(Path(__file__).parent))

from snrctl import (  # noqa: E402
    ChannelSpec,
    FrequencyGrid,
    GeneralizedPlant,
    RationalTransfer,
    coprime_factorize,
    synthesize,
)
from snrctl.youla_program import build_program_data  # noqa: E402

# unstable pole at 2 behind a one-step delay
DU_DEN = [1.0, -2.0, 0.0]
DU_SNRS = (13.0, 15.0, 20.0, 50.0, 100.0)


def du_plant() -> GeneralizedPlant:
    return GeneralizedPlant.from_siso(RationalTransfer.from_desc([1.0], DU_DEN))


def stable_plant() -> GeneralizedPlant:
    return GeneralizedPlant.from_siso(RationalTransfer.from_desc([1.0, 0.3], [1.0, -0.1, -0.2]))


@lru_cache(maxsize=None)
def du_result(snr: float, Nc: int = 32, m: int = 20, n: int = 629):
    with warnings.catch_warnings():
        warnings.simplefilter("ignore")
        return synthesize(du_plant(), ChannelSpec.awgn(snr), n=n, m=m, Nc=Nc)


@lru_cache(maxsize=None)
def du_data(snr: float = 20.0, n: int = 629):
    plant = du_plant()
    f = coprime_factorize(plant)
    return plant, f, build_program_data(plant, f, RationalTransfer.constant(1.0), FrequencyGrid(n), snr)


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


# acceptance verdicts, printed once at the end of the run
ACCEPTANCE: dict = {}


def record(number: int, title: str, ok: bool, detail: str = "") -> None:
    ACCEPTANCE[number] = (title, bool(ok), detail)
    print(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} {detail}")


def pytest_terminal_summary(terminalreporter):
    if not ACCEPTANCE:
        return
    terminalreporter.section("acceptance criteria")
    for number in sorted(ACCEPTANCE):
        title, ok, detail = ACCEPTANCE[number]
        terminalreporter.write_line(f"criterion {number:2d} {'PASS' if ok else 'FAIL'}: {title} {detail}")
