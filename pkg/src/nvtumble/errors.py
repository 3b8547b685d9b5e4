"""Exception hierarchy shared by the library and the command-line front end."""


class ValidationError(ValueError):
    """Invalid physical or configuration input."""


class NumericalError(RuntimeError):
    """A numerical routine could not produce a trustworthy result."""


class StepSizeError(NumericalError, ValueError):
    """An integration step exceeds the accuracy guard of the integrator."""


class ConvergenceError(NumericalError):
    """Grid refinement changed a reported quantity by more than the tolerance."""
