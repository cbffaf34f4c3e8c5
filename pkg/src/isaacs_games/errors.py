"""Exception hierarchy shared across the package."""


class GameError(Exception):
    """Base class for all errors raised by isaacs_games."""


class EvaluationError(GameError, ValueError):
    """A coefficient or payoff evaluation produced a non-finite value."""


class StrategyInvariantError(GameError):
    """An elementary strategy violated rule monotonicity or commit semantics."""


class OutOfDomainError(GameError, ValueError):
    """A strategy was queried at a time where it is not defined."""


class ExplosionError(GameError):
    """The simulated state exceeded the overflow guard."""

    def __init__(self, message, paths=()):
        super().__init__(message)
        self.paths = tuple(paths)


class CFLError(GameError, ValueError):
    """The time step breaks monotonicity of the explicit scheme."""


class MonotonicityError(GameError, ValueError):
    """Cross-derivative stencil is not diagonally dominant; the scheme would not be monotone."""


class IsaacsConditionError(GameError, ValueError):
    """Upper and lower Hamiltonians differ; saddle certification does not apply."""


class CandidateError(GameError, ValueError):
    """A semi-solution candidate violates its type invariants."""


class ConstructionRefused(GameError, ValueError):
    """A Perron bump construction failed its sampled preconditions."""

    def __init__(self, message, node=None):
        super().__init__(message)
        self.node = node


class ConfigError(GameError, ValueError):
    """Experiment configuration failed validation."""
