"""Exception types raised by the rank AFT toolkit"""

from dataclasses import dataclass
from typing import List, Optional, Sequence


class RankAftError(Exception):
    """Base class for all toolkit errors"""

    kind = "runtime"


class SchemaError(RankAftError):
    """Input columns, config keys or scenario keys do not match what is expected"""

    kind = "schema"


@dataclass(frozen=True)
class RowError:
    """A single rejected input row"""

    row: int
    column: Optional[str]
    message: str

    def to_dict(self) -> dict:
        return {'row': self.row, 'column': self.column, 'message': self.message}


class ValidationError(RankAftError):
    """One or more records are invalid"""

    kind = "validation"

    def __init__(self, message: str, rows: Sequence[RowError] = ()):
        super().__init__(message)
        self.rows: List[RowError] = list(rows)


class UnidentifiedDirectionError(RankAftError):
    """The pseudo-observation design does not have full column rank"""

    kind = "unidentified"

    def __init__(self, message: str, null_vector: Sequence[float]):
        super().__init__(message)
        self.null_vector = [float(v) for v in null_vector]


class ZeroEstimatingFunctionError(RankAftError):
    """No pair of observations is definitely ordered"""

    kind = "degenerate"


class CalibrationError(RankAftError):
    """Censoring calibration did not reach its target"""

    kind = "calibration"


class StudyAbortedError(RankAftError):
    """Too many replicates of a Monte Carlo study failed"""

    kind = "study"


USAGE_ERRORS = (SchemaError, ValidationError)
