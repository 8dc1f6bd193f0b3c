from fleetlab.floor import Action, FloorGraph, Heading, RobotState  # noqa: F401
__version__ = "0.1.0"
