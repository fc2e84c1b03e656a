""" Classes to write run artifacts: tab-separated logs and reports,
    and flat key = value text files.
"""

###########
# Imports #
###########
# Import system packages
import csv
from pathlib import Path
import os
import re


######################
# Generic File Class #
######################
class FileHandler:
    """ Generic file class to be inherited by specific file type classes. """
    def __init__(self, filename, **kwargs):
        """ Check filename extension matches child class.

                :params: filename: name of the file with extension
                :kwargs: data_directory: directory to write into
        """
        # Test for valid extension in filename
        if not filename.endswith(self.ext):
            raise ValueError(f"Invalid file format: {filename} is not .{self.ext}")

        # Assign variables
        self.filename = filename
        self.data_directory = kwargs.get('data_directory', '.')
        self.file = Path(os.path.join(self.data_directory, self.filename))


    def _check_for_data_folder(self):
        """ Create the data directory if it doesn't currently exist. """
        if not os.access(self.data_directory, os.F_OK):
            print(f"filehandler: {self.data_directory} directory not "
                  "found! Creating it...")
            os.makedirs(self.data_directory)


    def _check_write_access(self):
        """ Check for write access to the target file. """
        file_exists = os.access(self.file, os.F_OK)
        parent_writable = os.access(self.file.parent, os.W_OK)
        file_writable = os.access(self.file, os.W_OK)
        if (
            (not file_exists and not parent_writable) or
            (file_exists and not file_writable)
        ):
            raise PermissionError(
                f"filehandler: Permission denied accessing file: {self.file}")


    def _write(self, data):
        """ To be overridden by File class. """
        raise NotImplementedError


    def save(self, data):
        """ Create the directory if needed, check access and write. """
        self._check_for_data_folder()
        self._check_write_access()
        self._write(data)
        return self.file


##############################
# Specific File Type Classes #
##############################
class TSVFile(FileHandler):
    """ Specific file type: tab-separated values. Rows are appended;
        the header is written only when the file is new.
    """
    ext = "tsv"

    def __init__(self, filename, fieldnames=None, **kwargs):
        super().__init__(filename, **kwargs)
        self.fieldnames = None if fieldnames is None else list(fieldnames)


    def _write(self, data):
        rows = [data] if isinstance(data, dict) else list(data)
        if not rows:
            return
        fieldnames = self.fieldnames or list(rows[0].keys())

        newfile = not self.file.exists()
        with open(self.file, 'a', newline='', encoding='utf-8') as fh:
            writer = csv.DictWriter(fh, fieldnames=fieldnames, delimiter='\t',
                                    lineterminator='\n')
            if newfile:
                writer.writeheader()
            writer.writerows(rows)


class KeyValueFile(FileHandler):
    """ Specific file type: flat `key = value` text, one pair per line,
        keys sorted. Overwrites any existing file.
    """
    ext = "txt"

    def __init__(self, filename, header=None, **kwargs):
        super().__init__(filename, **kwargs)
        self.header = header


    def _write(self, data):
        with open(self.file, 'w', newline='\n', encoding='utf-8') as fh:
            fh.write(format_key_values(data, self.header))


def format_key_values(data, header=None):
    """ Canonical key = value text for a dict. """
    lines = []
    if header:
        lines.extend(f"# {line}" for line in header.splitlines())
    for key in sorted(data):
        lines.append(f"{key} = {_format_value(data[key])}")
    return '\n'.join(lines) + '\n'


def _format_value(value):
    if isinstance(value, bool):
        return 'true' if value else 'false'
    if isinstance(value, float):
        return repr(float(value))
    return str(value)


# A comment starts a line or follows whitespace; "a#b" stays a value
COMMENT = re.compile(r"(^|\s)#.*$")


def parse_key_values(text, source='<text>'):
    """ Parse key = value text. Returns (pairs, problems) where pairs is
        a list of (line_number, key, raw_value) and problems lists every
        malformed line.
    """
    pairs = []
    problems = []
    for number, line in enumerate(text.splitlines(), start=1):
        stripped = COMMENT.sub('', line).strip()
        if not stripped:
            continue
        if '=' not in stripped:
            problems.append(f"{source} line {number}: expected 'key = value', "
                            f"got {line.strip()!r}")
            continue
        key, value = stripped.split('=', 1)
        key = key.strip()
        if not key:
            problems.append(f"{source} line {number}: missing key")
            continue
        pairs.append((number, key, value.strip()))
    return pairs, problems
