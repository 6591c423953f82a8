"""Mass-casualty-incident triage training simulation.

Engine, scenario tooling, telemetry, and network service for two training
tasks: a five-patient single-responder run and a twenty-patient two-responder
team run, both scored against a fixed twenty-case master list.
"""

__version__ = "0.1.0"
