""" Per-entity modality features and the RVEC1 file format.

    RVEC1 layout (little-endian):
        8 bytes   magic "RADDVEC1"
        u32 x 3   entity_count, dim, flags (bit 0: presence mask included)
        u8 x N    presence mask, only when flagged (1 = present)
        f32 x dim for each present entity, in id order
"""

###########
# Imports #
###########
# Import system packages
import struct
from pathlib import Path

# Import data science packages
import numpy as np

# Import custom modules
from exceptions import data_exceptions


#############
# Constants #
#############
MAGIC = b'RADDVEC1'
HEADER = struct.Struct('<8sIII')
FLAG_PRESENCE_MASK = 0x1


##########################
# Modality Feature Store #
##########################
class ModalityFeatureStore:
    """ One modality: a vector per entity plus an explicit presence flag.
        Rows of absent entities hold zeros but are never read as data.
    """
    def __init__(self, vectors, present):
        vectors = np.array(vectors, dtype=np.float64, copy=True)
        present = np.array(present, dtype=bool, copy=True)
        if vectors.ndim != 2 or present.shape != (vectors.shape[0],):
            raise ValueError("Feature store needs (n, dim) vectors and n flags")
        for entity in np.flatnonzero(present):
            if not np.all(np.isfinite(vectors[entity])):
                raise data_exceptions.NonFiniteFeature(int(entity))
        vectors[~present] = 0.0
        vectors.setflags(write=False)
        present.setflags(write=False)
        self.vectors = vectors
        self.present = present


    @classmethod
    def absent(cls, n_entities, dim=0):
        """ Store in which no entity has this modality. """
        return cls(np.zeros((n_entities, dim)), np.zeros(n_entities, dtype=bool))


    @property
    def n_entities(self):
        return self.vectors.shape[0]


    @property
    def dim(self):
        return self.vectors.shape[1]


    def __eq__(self, other):
        return (isinstance(other, ModalityFeatureStore)
                and np.array_equal(self.present, other.present)
                and np.array_equal(self.vectors, other.vectors))


#################
# RVEC1 reading #
#################
def load_features(path, expected_count):
    """ Read an RVEC1 file holding exactly `expected_count` entities. """
    path = Path(path)
    data = path.read_bytes()
    if len(data) < HEADER.size:
        raise data_exceptions.FeatureFormatError(path, "truncated header")

    magic, count, dim, flags = HEADER.unpack_from(data, 0)
    if magic != MAGIC:
        raise data_exceptions.FeatureFormatError(
            path, f"bad magic {magic!r}, expected {MAGIC!r}")
    if count != expected_count:
        raise data_exceptions.FeatureFormatError(
            path, f"header declares {count} entities, expected {expected_count}")
    if flags & ~FLAG_PRESENCE_MASK:
        raise data_exceptions.FeatureFormatError(
            path, f"unknown flag bits 0x{flags:x}")

    offset = HEADER.size
    if flags & FLAG_PRESENCE_MASK:
        if len(data) < offset + count:
            raise data_exceptions.FeatureFormatError(
                path, "truncated presence mask")
        mask = np.frombuffer(data, dtype=np.uint8, count=count, offset=offset)
        if np.any(mask > 1):
            raise data_exceptions.FeatureFormatError(
                path, "presence mask bytes must be 0 or 1")
        present = mask.astype(bool)
        offset += count
    else:
        present = np.ones(count, dtype=bool)

    n_present = int(present.sum())
    expected_bytes = offset + n_present * dim * 4
    if len(data) < expected_bytes:
        raise data_exceptions.FeatureFormatError(
            path, f"truncated payload: {len(data)} bytes, expected {expected_bytes}")
    if len(data) > expected_bytes:
        raise data_exceptions.FeatureFormatError(
            path, f"{len(data) - expected_bytes} trailing bytes after payload")

    payload = np.frombuffer(data, dtype='<f4', count=n_present * dim,
                            offset=offset).reshape(n_present, dim)
    vectors = np.zeros((count, dim), dtype=np.float64)
    vectors[present] = payload

    # Name the first offending entity
    finite = np.all(np.isfinite(vectors), axis=1)
    bad = np.flatnonzero(present & ~finite)
    if bad.size:
        raise data_exceptions.NonFiniteFeature(int(bad[0]))

    print(f"featuremodel: Loaded {n_present}/{count} feature vectors "
          f"(dim {dim}) from {path.name}")
    return ModalityFeatureStore(vectors, present)


#################
# RVEC1 writing #
#################
def write_features(path, store, include_mask=None):
    """ Write a store as RVEC1. The presence mask is written whenever
        any entity is absent, or when include_mask is True.
    """
    if include_mask is None:
        include_mask = not bool(np.all(store.present))
    if not include_mask and not np.all(store.present):
        raise ValueError("A store with absent entities needs a presence mask")

    flags = FLAG_PRESENCE_MASK if include_mask else 0
    parts = [HEADER.pack(MAGIC, store.n_entities, store.dim, flags)]
    if include_mask:
        parts.append(store.present.astype(np.uint8).tobytes())
    parts.append(store.vectors[store.present].astype('<f4').tobytes())
    Path(path).write_bytes(b''.join(parts))


class EntityFeatures:
    """ The visual and textual stores of one graph. """
    def __init__(self, visual, textual):
        if visual.n_entities != textual.n_entities:
            raise ValueError(
                f"Visual store covers {visual.n_entities} entities but the "
                f"textual store covers {textual.n_entities}")
        self.visual = visual
        self.textual = textual


    @classmethod
    def absent(cls, n_entities, visual_dim=0, textual_dim=0):
        return cls(ModalityFeatureStore.absent(n_entities, visual_dim),
                   ModalityFeatureStore.absent(n_entities, textual_dim))


    @property
    def n_entities(self):
        return self.visual.n_entities


    def modalities(self):
        return (self.visual, self.textual)
