"""Exception hierarchy shared by the solvers, the simulators and the CLI."""


class GLabError(Exception):
    """Base class. ``context`` collects provenance added while the error propagates."""

    def __init__(self, message: str):
        super().__init__(message)
        self.message = message
        self.context: list[str] = []

    def add_context(self, where: str) -> "GLabError":
        self.context.append(where)
        return self

    def __str__(self) -> str:
        if not self.context:
            return self.message
        return f"{' / '.join(reversed(self.context))}: {self.message}"


class ConfigurationError(GLabError):
    pass


class DomainError(GLabError, ValueError):
    pass


class ShapeError(GLabError, ValueError):
    pass


class NumericFailure(GLabError):
    def __init__(self, message: str, step: int | None = None):
        super().__init__(message if step is None else f"{message} (step {step})")
        self.step = step


class GeneratorError(GLabError):
    pass


class GridRangeError(GLabError):
    pass


class ScenarioError(GLabError):
    pass
