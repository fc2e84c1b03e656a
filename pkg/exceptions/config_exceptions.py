""" Custom exceptions for run configuration files.
"""


class ConfigError(Exception):
    """ One or more configuration problems. All problems found
        during validation are collected and reported together.
    """

    def __init__(self, problems, *args):
        super().__init__(args)
        if isinstance(problems, str):
            problems = [problems]
        self.problems = list(problems)


    def __str__(self):
        lines = '\n  - '.join(self.problems)
        return f'Config Exception: {len(self.problems)} problem(s):\n  - {lines}'
