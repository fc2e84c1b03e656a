""" Custom exceptions for loading triples, feature files and
    synthetic graphs.
"""


class DataError(Exception):
    """ Base class for all data problems """


class MalformedTripleLine(DataError):
    """ Triple line without exactly three fields """

    def __init__(self, path, line_number, field_count, *args):
        super().__init__(args)
        self.path = path
        self.line_number = line_number
        self.field_count = field_count


    def __str__(self):
        return f'Data Exception: {self.path} line {self.line_number} has ' \
            f'{self.field_count} field(s), expected 3.'


class UnknownLabel(DataError):
    """ Label not present in a reused vocabulary """

    def __init__(self, path, line_number, label, *args):
        super().__init__(args)
        self.path = path
        self.line_number = line_number
        self.label = label


    def __str__(self):
        return f'Data Exception: {self.path} line {self.line_number}: ' \
            f'unknown label {self.label!r}.'


class EmptyTripleFile(DataError):
    """ Triple file without any triples """

    def __init__(self, path, *args):
        super().__init__(args)
        self.path = path


    def __str__(self):
        return f'Data Exception: {self.path} contains no triples.'


class FeatureFormatError(DataError):
    """ RVEC1 header mismatch or truncated payload """

    def __init__(self, path, reason, *args):
        super().__init__(args)
        self.path = path
        self.reason = reason


    def __str__(self):
        return f'Data Exception: {self.path}: {self.reason}'


class NonFiniteFeature(DataError):
    """ Feature vector containing NaN or infinity """

    def __init__(self, entity_id, *args):
        super().__init__(args)
        self.entity_id = entity_id


    def __str__(self):
        return f'Data Exception: feature vector of entity {self.entity_id} ' \
            'contains non-finite values.'


class InfeasibleSynthSize(DataError):
    """ Synthetic graph size parameters cannot be satisfied """

    def __init__(self, reason, *args):
        super().__init__(args)
        self.reason = reason


    def __str__(self):
        return f'Data Exception: infeasible synthetic graph: {self.reason}'
