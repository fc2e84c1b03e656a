""" Global functions.
"""

###########
# Imports #
###########
# Import system packages
import hashlib
import os
from concurrent.futures import ThreadPoolExecutor
from datetime import datetime
from pathlib import Path

# Import data science packages
import numpy as np


#########
# Funcs #
#########
def unique_directory(path, now=None):
    """ Create and return a fresh directory. If `path` already exists
        a datestamp suffix is appended, then a counter if needed.
    """
    path = Path(path)
    if not path.exists():
        os.makedirs(path)
        return path

    now = datetime.now() if now is None else now
    datestamp = now.strftime("%Y_%b_%d_%H%M%S")
    candidate = path.with_name(f"{path.name}_{datestamp}")
    counter = 1
    while candidate.exists():
        candidate = path.with_name(f"{path.name}_{datestamp}_{counter}")
        counter += 1
    os.makedirs(candidate)
    print(f"general: {path} exists; using {candidate}")
    return candidate


def tensor_hash(tensors):
    """ sha256 over the names, dtypes, shapes and raw bytes of a
        name -> array dict, in name order.
    """
    digest = hashlib.sha256()
    for name in sorted(tensors):
        arr = np.ascontiguousarray(tensors[name])
        digest.update(name.encode('utf-8'))
        digest.update(arr.dtype.str.encode('ascii'))
        digest.update(np.asarray(arr.shape, dtype='<i8').tobytes())
        digest.update(arr.tobytes())
    return digest.hexdigest()


TRUE_WORDS = ('true', 'yes', '1', 'on')
FALSE_WORDS = ('false', 'no', '0', 'off')


def parse_bool(raw):
    """ Case-insensitive true/false/yes/no/1/0/on/off. """
    if isinstance(raw, bool):
        return raw
    word = str(raw).strip().lower()
    if word in TRUE_WORDS:
        return True
    if word in FALSE_WORDS:
        return False
    raise ValueError(f"not a boolean: {raw!r}")


def coerce_value(raw, kind):
    """ Convert text to `kind` (bool, int, float or str). Integers are
        accepted for float fields; floats are rejected for int fields.
    """
    if kind is bool:
        return parse_bool(raw)
    if kind is int:
        if isinstance(raw, bool):
            raise ValueError(f"not an integer: {raw!r}")
        if isinstance(raw, int):
            return raw
        return int(str(raw).strip())
    if kind is float:
        if isinstance(raw, bool):
            raise ValueError(f"not a number: {raw!r}")
        return float(raw)
    return str(raw).strip()


def ordered_map(fn, items, threads=1):
    """ map() over a thread pool, results in input order. """
    items = list(items)
    if threads <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ThreadPoolExecutor(max_workers=threads) as executor:
        return list(executor.map(fn, items))
