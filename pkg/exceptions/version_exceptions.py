""" Custom exceptions for reading checkpoint files.
"""


class CheckpointFormatError(Exception):
    """ Bad magic, truncated segment or malformed record """

    def __init__(self, path, reason, *args):
        super().__init__(args)
        self.path = path
        self.reason = reason


    def __str__(self):
        return f'Checkpoint Exception: {self.path}: {self.reason}'


class CheckpointVersionMismatch(CheckpointFormatError):
    """ Checkpoint written by an unsupported format version """

    def __init__(self, path, found, supported, *args):
        super().__init__(path, 'version mismatch', *args)
        self.found = found
        self.supported = supported


    def __str__(self):
        return f'Checkpoint Exception: {self.path} has format version ' \
            f'{self.found}, but version {self.supported} is supported.'


class CheckpointShapeMismatch(CheckpointFormatError):
    """ Stored tensor does not match the shapes implied by the config """

    def __init__(self, path, name, expected, found, *args):
        super().__init__(path, 'shape mismatch', *args)
        self.name = name
        self.expected = expected
        self.found = found


    def __str__(self):
        return f'Checkpoint Exception: {self.path}: tensor {self.name} has ' \
            f'shape {self.found}, expected {self.expected}.'
