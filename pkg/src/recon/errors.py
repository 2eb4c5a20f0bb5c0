class ContractError(ValueError):
    """A caller broke an operation's precondition (shape, domain, ordering)."""


class WorldError(RuntimeError):
    """A world spec could not be built or validated."""


class CollectionError(RuntimeError):
    """Data collection could not continue (agent wedged)."""


class TrainingDiverged(RuntimeError):
    """Loss became non-finite during training."""


class NoPath(LookupError):
    """No path between two graph vertices under the edge filter."""
