"""Exception hierarchy shared by every ravenlet module."""


class RavenletError(Exception):
    """Base class for all library errors."""


class UserError(RavenletError):
    """Errors caused by bad inputs (files, queries, models). CLI exit code 2."""


class SchemaError(UserError):
    """A document does not follow the expected structure."""


class ValidationError(UserError):
    """A structurally well-formed object violates an invariant."""

    def __init__(self, message, node_id=None, report=None):
        self.node_id = node_id
        self.report = report or []
        if node_id is not None:
            message = f"{node_id}: {message}"
        super().__init__(message)


class ParseError(UserError):
    def __init__(self, message, line=None, column=None):
        self.line = line
        self.column = column
        if line is not None:
            message = f"{message} (line {line}, column {column})"
        super().__init__(message)


class ResolutionError(UserError):
    """Unknown or ambiguous table/column, or a literal of the wrong type."""


class UnsupportedError(UserError):
    """Valid SQL outside the supported subset (OR, subqueries, outer joins)."""


class BindError(UserError):
    """Pipeline inputs cannot be bound to query columns."""


class CycleError(RavenletError):
    pass


class ArityError(RavenletError):
    pass


class StatsError(UserError):
    pass


class CompilationFailed(RavenletError):
    """Whole-pipeline compilation did not succeed; the original plan stays usable."""

    def __init__(self, op_name, message=None):
        self.op_name = op_name
        super().__init__(message or f"cannot compile operator {op_name}")


class UnsupportedOperator(CompilationFailed):
    pass


class UnsupportedModel(CompilationFailed):
    pass


class ShapeError(RavenletError):
    pass


class PredictorFormatError(UserError):
    pass


class CsvError(UserError):
    def __init__(self, message, row=None, column=None):
        self.row = row
        self.column = column
        if row is not None:
            message = f"{message} (row {row}, column {column})"
        super().__init__(message)


class ExecError(RavenletError):
    def __init__(self, message, node_id=None):
        self.node_id = node_id
        if node_id is not None:
            message = f"node {node_id}: {message}"
        super().__init__(message)


class EvalError(RavenletError):
    pass


class CoverageError(RavenletError):
    pass
