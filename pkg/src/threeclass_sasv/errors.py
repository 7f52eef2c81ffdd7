"""Exception types shared across the package.

Every error carries a short machine-readable ``code`` so the command line
front end can report it on a single parseable line.
"""


class SASVError(Exception):
    code = "E_RUNTIME"
    exit_status = 3


class ValidationError(SASVError, ValueError):
    """Bad input: malformed config, broken invariant, missing class."""

    code = "E_VALIDATION"
    exit_status = 2


class TrainingDiverged(SASVError, RuntimeError):
    code = "E_DIVERGED"
