import numpy as np
import pytest

from bedexit.data import Label, LabelInterval, PatientRecord, ReadingTable
from bedexit.sim import Scenario, generate_cohort


def make_record(t, antenna=None, rssi=None, phase=None, freq=None, tag=None, labels=None, patient_id=0):
    """Build a record from columns; unspecified columns get valid constant values."""
    t = np.asarray(t, dtype=float)
    n = t.size
    fill = lambda v, d: np.full(n, d) if v is None else np.asarray(v)
    table = ReadingTable(t, fill(antenna, 1), fill(rssi, -50.0), fill(phase, 1.0), fill(freq, 922.0), fill(tag, 1))
    if labels is None:
        end = float(t.max()) + 1.0 if n else 1.0
        labels = [(0.0, end, Label.IN_BED)]
    ivs = tuple(LabelInterval(float(a), float(b), Label(lab)) for a, b, lab in labels)
    return PatientRecord(patient_id, table, ivs)


@pytest.fixture(scope="session")
def scenario():
    return Scenario()


@pytest.fixture(scope="session")
def small_cohort(scenario):
    return generate_cohort(3, scenario)


ACCEPTANCE_LINES: list[str] = []


def pytest_terminal_summary(terminalreporter):
    if ACCEPTANCE_LINES:
        terminalreporter.section("acceptance criteria")
        for line in ACCEPTANCE_LINES:
            terminalreporter.write_line(line)
