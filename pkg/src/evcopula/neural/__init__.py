"""Neural joint-dependence models: network core, CODINE, GMMNet."""

from .net import MLP, Adam, TrainLog, feedforward

__all__ = ["MLP", "Adam", "TrainLog", "feedforward"]
