class NumericError(ArithmeticError):
    """A numeric routine failed to converge or produced a non-finite value.

    ``inputs`` holds the arguments that triggered the failure.
    """

    def __init__(self, message, **inputs):
        self.inputs = inputs
        if inputs:
            detail = ", ".join(f"{k}={v!r}" for k, v in inputs.items())
            message = f"{message} ({detail})"
        super().__init__(message)
