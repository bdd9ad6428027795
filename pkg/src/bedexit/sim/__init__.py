"""Synthetic ward generator: scripted activities to labelled RFID streams."""

from .cohort import generate_cohort, simulate_patient, write_cohort
from .scenario import RfChannelParams, RoomGeometry, Scenario, ScriptBounds, SensorModel

__all__ = [
    "RfChannelParams", "RoomGeometry", "Scenario", "ScriptBounds", "SensorModel",
    "generate_cohort", "simulate_patient", "write_cohort",
]
