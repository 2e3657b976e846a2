"""Exception types. Each carries a short ``kind`` used as the CLI error prefix."""


class DCCError(Exception):
    kind = "error"


class ParseError(DCCError):
    kind = "parse-error"


class NonFiniteError(DCCError):
    kind = "non-finite-value"


class ShapeError(DCCError, ValueError):
    kind = "shape-mismatch"


class LengthMismatchError(DCCError, ValueError):
    kind = "length-mismatch"


class TapeMismatchError(DCCError):
    kind = "tape-mismatch"


class CheckpointError(DCCError):
    kind = "checkpoint-error"


class VersionMismatchError(CheckpointError):
    kind = "version-mismatch"


class GraphError(DCCError):
    kind = "graph-error"


class DegenerateError(DCCError):
    kind = "degenerate"


class DivergenceError(DCCError):
    kind = "divergence"


class MissingLogError(DCCError):
    kind = "missing-log"
