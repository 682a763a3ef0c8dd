"""Joint velocity estimation from time-shifted FMCW chirp sequences."""

from chirpjoint.jdear import SolverSettings, VelocityReport, solve
from chirpjoint.reference import reference_pipeline
from chirpjoint.scenario import RadarScenario, load_scenario, paper_scenario
from chirpjoint.synth import Target, TargetSet, synthesize_cube

__all__ = ["RadarScenario", "SolverSettings", "Target", "TargetSet", "VelocityReport", "load_scenario",
           "paper_scenario", "reference_pipeline", "solve", "synthesize_cube"]
