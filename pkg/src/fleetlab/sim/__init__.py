from .env import EventRecord, ReservationTable, RobotBusy, UnknownRobot, env_step
from .episode import Episode, load_episode, reconstruct_snapshots
from .generate import InvalidDimensions, generate_floor
from .policy import Mission, NoPath, scripted_policy
from .simulate import simulate

__all__ = [
    "EventRecord", "ReservationTable", "RobotBusy", "UnknownRobot", "env_step",
    "Episode", "load_episode", "reconstruct_snapshots",
    "InvalidDimensions", "generate_floor",
    "Mission", "NoPath", "scripted_policy", "simulate",
]
