"""Radiotherapy patient scheduling by column generation, heuristics and exhaustive search."""

from .domain import (Assignment, Instance, InstanceError, MachinePark, OccupancyGrid, Patient,
                     PatientSchedule, Protocol, Solution, SwitchKind, TimeGrid, ValidationReport,
                     ViolationCode, validate_solution)
from .objective import PRESETS, SENSITIVITY, ObjectiveWeights, resolve_weights

__version__ = "0.1.0"
