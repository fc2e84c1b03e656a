""" Custom exceptions for numeric failures during training and
    gradient checking.
"""


class NumericError(Exception):
    """ Base class for numeric failures """


class NonFiniteLoss(NumericError):
    """ A loss term became NaN or infinite """

    def __init__(self, epoch, step, breakdown, *args):
        super().__init__(args)
        self.epoch = epoch
        self.step = step
        self.breakdown = breakdown


    def __str__(self):
        terms = ', '.join(f'{k}={v!r}' for k, v in self.breakdown.items())
        return f'Numeric Exception: non-finite loss at epoch {self.epoch}, ' \
            f'step {self.step} ({terms}).'


class ShapeMismatch(NumericError):
    """ Array shape does not match what an operation expects """

    def __init__(self, name, expected, found, *args):
        super().__init__(args)
        self.name = name
        self.expected = expected
        self.found = found


    def __str__(self):
        return f'Numeric Exception: {self.name} has shape {self.found}, ' \
            f'expected {self.expected}.'


class GradCheckFailure(NumericError):
    """ One or more gradient checks exceeded the tolerance """

    def __init__(self, failures, tolerance, *args):
        super().__init__(args)
        self.failures = failures
        self.tolerance = tolerance


    def __str__(self):
        names = sorted({f.term for f in self.failures})
        return f'Numeric Exception: {len(self.failures)} gradient check(s) ' \
            f'above {self.tolerance:g} ({", ".join(names)}).'


class NonFiniteValues(NumericError):
    """ Non-finite values where finite ones are required """

    def __init__(self, name, *args):
        super().__init__(args)
        self.name = name


    def __str__(self):
        return f'Numeric Exception: {self.name} contains non-finite values.'
