""" Knowledge graph model: vocabularies, triple splits, the filtered
    evaluation index, and query streams.

    Triple files are UTF-8 TSV with three label columns and no header.
    Ids are assigned in first-occurrence order, so loading the same
    files in the same order always produces the same ids.
"""

###########
# Imports #
###########
# Import system packages
import csv
from dataclasses import dataclass
from enum import IntEnum
from pathlib import Path
from types import MappingProxyType

# Import data science packages
import numpy as np
import pandas as pd

# Import custom modules
from exceptions import data_exceptions


#########
# Types #
#########
class Direction(IntEnum):
    """ Which slot of the triple a query hides. """
    TAIL = 0
    HEAD = 1


class Vocabulary:
    """ Ordered label <-> dense id bijection. """
    def __init__(self, labels=()):
        self._labels = []
        self._ids = {}
        for label in labels:
            self.add(label)


    def add(self, label):
        """ Return the id of `label`, assigning the next id if new. """
        if label not in self._ids:
            self._ids[label] = len(self._labels)
            self._labels.append(label)
        return self._ids[label]


    def get(self, label):
        return self._ids.get(label)


    def label(self, idx):
        return self._labels[idx]


    @property
    def labels(self):
        return tuple(self._labels)


    def copy(self):
        return Vocabulary(self._labels)


    def __len__(self):
        return len(self._labels)


    def __contains__(self, label):
        return label in self._ids


    def __eq__(self, other):
        return isinstance(other, Vocabulary) and self._labels == other._labels


@dataclass(frozen=True)
class Query:
    """ An incomplete triple: (known, relation, ?) for TAIL,
        (?, relation, known) for HEAD.
    """
    known_entity: int
    relation: int
    direction: Direction
    answer: int = -1


class KnowledgeGraph:
    """ Entity/relation vocabularies, train/valid/test triples and the
        filter index. Immutable after construction.
    """
    def __init__(self, entities, relations, train, valid, test):
        self.entities = entities.copy()
        self.relations = relations.copy()
        self.train = _freeze(train)
        self.valid = _freeze(valid)
        self.test = _freeze(test)

        # All ids within vocabulary bounds
        for name, split in self.splits().items():
            if len(split) == 0:
                continue
            if split[:, [0, 2]].min() < 0 or \
                    split[:, [0, 2]].max() >= len(self.entities):
                raise ValueError(f"{name} split has entity ids out of range")
            if split[:, 1].min() < 0 or split[:, 1].max() >= len(self.relations):
                raise ValueError(f"{name} split has relation ids out of range")

        self.filter_index = build_filter_index(self)


    @property
    def n_entities(self):
        return len(self.entities)


    @property
    def n_relations(self):
        return len(self.relations)


    def splits(self):
        return {'train': self.train, 'valid': self.valid, 'test': self.test}


    def split(self, name):
        try:
            return self.splits()[name]
        except KeyError:
            raise ValueError(f"Unknown split: {name}")


    @classmethod
    def from_files(cls, train_path, valid_path, test_path):
        """ Load three split files, growing the vocabularies in
            train -> valid -> test order.
        """
        entities = Vocabulary()
        relations = Vocabulary()
        triples = []
        for path in (train_path, valid_path, test_path):
            split, entities, relations = load_triples(
                path, 'build', entities, relations)
            triples.append(split)
        return cls(entities, relations, *triples)


def _freeze(triples):
    arr = np.array(triples, dtype=np.int64).reshape(-1, 3)
    arr.setflags(write=False)
    return arr


################
# Triple files #
################
def load_triples(path, vocab_mode='build', entities=None, relations=None):
    """ Read a TSV triple file.

        vocab_mode 'build' extends the given vocabularies (or new ones)
        with unseen labels in first-occurrence order; 'reuse' treats any
        unseen label as an error. Returns (triples, entities, relations).
    """
    if vocab_mode not in ('build', 'reuse'):
        raise ValueError(f"vocab_mode must be 'build' or 'reuse', got {vocab_mode}")
    path = Path(path)
    if not path.exists():
        raise FileNotFoundError(path)

    entities = Vocabulary() if entities is None else entities.copy()
    relations = Vocabulary() if relations is None else relations.copy()

    frame = _read_label_frame(path)
    if frame.empty:
        raise data_exceptions.EmptyTripleFile(path)

    triples = np.empty((len(frame), 3), dtype=np.int64)
    for row, (head, rel, tail, line_number) in enumerate(
            frame.itertuples(index=False, name=None)):
        if vocab_mode == 'reuse':
            for label, vocab in ((head, entities), (rel, relations),
                                 (tail, entities)):
                if label not in vocab:
                    raise data_exceptions.UnknownLabel(path, line_number, label)
        triples[row] = (entities.add(head), relations.add(rel),
                        entities.add(tail))

    print(f"kgdata: Loaded {len(triples)} triples from {path.name}")
    return triples, entities, relations


def _read_label_frame(path):
    """ Read all non-blank lines as three string columns and keep the
        1-based line numbers for error messages.
    """
    text = Path(path).read_text(encoding='utf-8')
    raw = pd.DataFrame({'line': pd.Series(text.split('\n'), dtype=object)})
    raw['line_number'] = np.arange(1, len(raw) + 1)
    raw = raw[raw['line'].str.strip() != '']
    fields = raw['line'].str.rstrip('\r').str.split('\t')
    counts = fields.str.len()
    bad = counts != 3
    if bad.any():
        first = raw.index[bad.to_numpy()][0]
        raise data_exceptions.MalformedTripleLine(
            path, int(raw.loc[first, 'line_number']), int(counts[first]))

    return pd.DataFrame({
        'head': fields.str[0].to_numpy(),
        'relation': fields.str[1].to_numpy(),
        'tail': fields.str[2].to_numpy(),
        'line_number': raw['line_number'].to_numpy(),
    })


def write_triples(path, triples, entities, relations):
    """ Write id triples back out as labels. """
    frame = pd.DataFrame({
        'head': [entities.label(h) for h in triples[:, 0]],
        'relation': [relations.label(r) for r in triples[:, 1]],
        'tail': [entities.label(t) for t in triples[:, 2]],
    })
    frame.to_csv(path, sep='\t', header=False, index=False,
                 quoting=csv.QUOTE_NONE, lineterminator='\n')


################
# Filter index #
################
def build_filter_index(kg):
    """ Map (entity, relation, direction) to every entity completing a
        true triple in train, valid or test.
    """
    index = {}
    for split in (kg.train, kg.valid, kg.test):
        for h, r, t in split.tolist():
            index.setdefault((h, r, Direction.TAIL), set()).add(t)
            index.setdefault((t, r, Direction.HEAD), set()).add(h)
    return MappingProxyType(
        {key: frozenset(values) for key, values in index.items()})


def true_completions(filter_index, query):
    return filter_index.get(
        (query.known_entity, query.relation, Direction(query.direction)),
        frozenset())


###########
# Queries #
###########
def make_queries(kg, split):
    """ Two queries per triple, tail prediction first. """
    if split not in ('valid', 'test'):
        raise ValueError(f"Queries are built from 'valid' or 'test', got {split}")
    triples = kg.split(split)
    if len(triples) == 0:
        raise ValueError(f"The {split} split is empty")

    queries = []
    for h, r, t in triples.tolist():
        queries.append(Query(h, r, Direction.TAIL, t))
        queries.append(Query(t, r, Direction.HEAD, h))
    return queries


def query_arrays(queries):
    """ Column arrays (known, relation, direction, answer). """
    known = np.array([q.known_entity for q in queries], dtype=np.int64)
    relations = np.array([q.relation for q in queries], dtype=np.int64)
    directions = np.array([int(q.direction) for q in queries], dtype=np.int64)
    answers = np.array([q.answer for q in queries], dtype=np.int64)
    return known, relations, directions, answers


def triple_items(triples):
    """ Expand triples into one tail item and one head item each.
        Returns (known, relation, direction, answer) arrays.
    """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    n = len(triples)
    known = np.concatenate([triples[:, 0], triples[:, 2]])
    relations = np.concatenate([triples[:, 1], triples[:, 1]])
    directions = np.concatenate([np.full(n, Direction.TAIL),
                                 np.full(n, Direction.HEAD)]).astype(np.int64)
    answers = np.concatenate([triples[:, 2], triples[:, 0]])
    return known, relations, directions, answers


def inverse_triples(triples, n_relations):
    """ Reversed triples (t, r + |R|, h) for inverse-relation augmentation. """
    triples = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return np.stack([triples[:, 2], triples[:, 1] + n_relations,
                     triples[:, 0]], axis=1)


def iter_batches(triples, batch_size, rng):
    """ Shuffle once and yield consecutive batches. """
    order = rng.permutation(len(triples))
    for start in range(0, len(order), batch_size):
        yield triples[order[start:start + batch_size]]
