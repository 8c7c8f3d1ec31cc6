"""Error types raised across the package.

Every error carries a short machine-readable ``code`` so that callers (and the
CLI) can branch on the failure kind without parsing messages.
"""


class ISVDError(Exception):
    code = "error"

    def __init__(self, message=""):
        super().__init__(message or self.code)


class ShapeError(ISVDError, ValueError):
    code = "shape"


class NumericError(ISVDError, ValueError):
    code = "numeric"


class SvdFailure(ISVDError, ArithmeticError):
    code = "svd_fail"


class SingularMatrixError(ISVDError, ArithmeticError):
    code = "singular"


class BasisMismatch(ISVDError, ValueError):
    code = "basis_mismatch"


class NotOrthonormal(ISVDError, ValueError):
    code = "not_orthonormal"


class BadSigma(ISVDError, ValueError):
    code = "bad_sigma"


class OutOfBounds(ISVDError, IndexError):
    code = "oob"


class TooLarge(ISVDError, MemoryError):
    code = "too_large"


class BadPlan(ISVDError, ValueError):
    code = "bad_plan"


class StateVersionError(ISVDError, ValueError):
    code = "state_version"


class CorruptState(ISVDError, ValueError):
    code = "corrupt_state"


class DatasetError(ISVDError, ValueError):
    code = "dataset"
