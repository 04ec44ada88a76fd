"""Exception hierarchy shared by every gapfill module."""


class GapFillError(Exception):
    """Base class for all errors raised by gapfill."""


class InsufficientDataError(GapFillError):
    """Not enough observed samples to run the requested operation."""


class SingularSystemError(GapFillError):
    """An unregularized least-squares system is rank deficient."""


class CSVParseError(GapFillError):
    """A CSV file violates the ``index,value`` contract."""

    def __init__(self, message: str, line: int | None = None):
        self.line = line
        if line is not None:
            message = f"line {line}: {message}"
        super().__init__(message)


class PipelineStructureError(GapFillError):
    """A pipeline graph violates a structural rule."""

    def __init__(self, rule: str, node_id: str | None = None):
        self.rule = rule
        self.node_id = node_id
        message = rule if node_id is None else f"{rule} (node {node_id!r})"
        super().__init__(message)


class NodeFitError(GapFillError):
    """Fitting one pipeline node failed; carries the node id."""

    def __init__(self, node_id: str, cause: Exception):
        self.node_id = node_id
        self.cause = cause
        super().__init__(f"node {node_id!r}: {cause}")
