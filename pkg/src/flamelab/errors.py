"""Shared exception types."""


class ConfigurationError(ValueError):
    """Invalid grid, solver, model or run configuration."""


class BlowUpError(RuntimeError):
    """Time integration produced non-finite values."""

    def __init__(self, step_index: int, sequence_index: int | None = None):
        self.step_index = step_index
        self.sequence_index = sequence_index
        where = f"step {step_index}"
        if sequence_index is not None:
            where += f" of sequence {sequence_index}"
        super().__init__(f"solution blew up (NaN/Inf) at {where}")


class GraphError(RuntimeError):
    """Malformed computation-graph construction or usage."""
