""" Cluster-structured synthetic knowledge graphs with modality features.

    Entities are split into latent clusters. Each relation has a domain
    (a subset of clusters) and maps every domain cluster to a target
    cluster, so tails are predictable from (head cluster, relation) and
    heads from (tail cluster, relation). A small fraction of triples
    violate the mapping. Visual and textual features are noisy copies
    of per-cluster prototypes, with a fraction of entities lacking each
    modality.
"""

###########
# Imports #
###########
# Import system packages
import os
from pathlib import Path

# Import data science packages
import numpy as np
import pandas as pd

# Import custom modules
from exceptions import data_exceptions
from models import featuremodel
from models import filehandler
from models import kgdata


#############
# Constants #
#############
DATASET_FILES = {
    'train': 'train.tsv',
    'valid': 'valid.tsv',
    'test': 'test.tsv',
    'visual': 'visual.rvec',
    'textual': 'textual.rvec',
}
MANIFEST_FILE = 'manifest.txt'
MAX_ATTEMPTS_PER_TRIPLE = 50


#########
# Model #
#########
def split_sizes(n_triples):
    """ 80/10/10 split; valid and test get at least one triple each. """
    n_held = max(1, int(round(0.1 * n_triples)))
    return n_triples - 2 * n_held, n_held, n_held


def synth_kg(seed, n_entities=100, n_relations=10, n_triples=1000,
             feature_dim=16, feature_noise=0.1, n_clusters=None,
             violation_rate=0.05, missing_fraction=0.1):
    """ Generate (KnowledgeGraph, visual store, textual store).

        Deterministic in all arguments. Every entity and relation occurs
        in the training split, and ids follow first-occurrence order over
        train, valid, test, so writing the graph out and reloading it
        reproduces the same ids.
    """
    n_clusters = n_clusters or max(2, int(round(np.sqrt(n_entities))))
    _check_sizes(n_entities, n_relations, n_triples, feature_dim,
                 feature_noise, n_clusters, violation_rate, missing_fraction)

    rng = np.random.default_rng(seed)
    graph = _ClusterGraph(rng, n_entities, n_relations, n_clusters,
                          violation_rate)

    n_train, n_valid, n_test = split_sizes(n_triples)
    coverage = graph.coverage_triples()
    if len(coverage) > n_train:
        raise data_exceptions.InfeasibleSynthSize(
            f"{len(coverage)} triples are needed to cover every entity and "
            f"relation but the train split only holds {n_train}")
    extra = graph.random_triples(n_triples - len(coverage))

    train = np.concatenate([coverage, extra[:n_train - len(coverage)]])
    train = train[rng.permutation(len(train))]
    valid = extra[n_train - len(coverage):n_train - len(coverage) + n_valid]
    test = extra[n_train - len(coverage) + n_valid:]

    # Features in the generator's id space
    visual = _cluster_features(rng, graph.clusters, n_clusters, feature_dim,
                               feature_noise, missing_fraction)
    textual = _cluster_features(rng, graph.clusters, n_clusters, feature_dim,
                                feature_noise, missing_fraction)

    # Relabel entities and relations in first-occurrence order
    splits = np.concatenate([train, valid, test])
    entity_order = pd.unique(splits[:, [0, 2]].reshape(-1))
    relation_order = pd.unique(splits[:, 1])
    entity_map = np.empty(n_entities, dtype=np.int64)
    entity_map[entity_order] = np.arange(n_entities)
    relation_map = np.empty(n_relations, dtype=np.int64)
    relation_map[relation_order] = np.arange(n_relations)

    def relabel(triples):
        return np.stack([entity_map[triples[:, 0]], relation_map[triples[:, 1]],
                         entity_map[triples[:, 2]]], axis=1)

    entities = kgdata.Vocabulary(f"e{i:04d}" for i in range(n_entities))
    relations = kgdata.Vocabulary(f"r{i:03d}" for i in range(n_relations))
    kg = kgdata.KnowledgeGraph(entities, relations, relabel(train),
                               relabel(valid), relabel(test))

    stores = []
    for vectors, present in (visual, textual):
        stores.append(featuremodel.ModalityFeatureStore(
            vectors[entity_order], present[entity_order]))

    print(f"synthmodel: Generated {n_entities} entities, {n_relations} "
          f"relations, {n_train}/{n_valid}/{n_test} triples (seed {seed})")
    return kg, stores[0], stores[1]


def _check_sizes(n_entities, n_relations, n_triples, feature_dim,
                 feature_noise, n_clusters, violation_rate, missing_fraction):
    problems = []
    if n_entities < 4:
        problems.append(f"n_entities must be >= 4, got {n_entities}")
    if n_relations < 1:
        problems.append(f"n_relations must be >= 1, got {n_relations}")
    if n_triples < 10:
        problems.append(f"n_triples must be >= 10, got {n_triples}")
    if n_triples > n_entities**2 * n_relations:
        problems.append(f"n_triples {n_triples} exceeds the "
                        f"{n_entities**2 * n_relations} possible triples")
    if feature_dim < 1:
        problems.append(f"feature_dim must be >= 1, got {feature_dim}")
    if feature_noise < 0:
        problems.append(f"feature_noise must be >= 0, got {feature_noise}")
    if not 1 <= n_clusters <= n_entities:
        problems.append(f"n_clusters must be in [1, {n_entities}], got {n_clusters}")
    if not 0 <= violation_rate <= 1:
        problems.append(f"violation_rate must be in [0, 1], got {violation_rate}")
    if not 0 <= missing_fraction < 1:
        problems.append(f"missing_fraction must be in [0, 1), got {missing_fraction}")
    if problems:
        raise data_exceptions.InfeasibleSynthSize('; '.join(problems))


class _ClusterGraph:
    """ Latent cluster assignment and relation mappings. """
    def __init__(self, rng, n_entities, n_relations, n_clusters, violation_rate):
        self.rng = rng
        self.n_entities = n_entities
        self.n_relations = n_relations
        self.violation_rate = violation_rate

        self.clusters = rng.permutation(n_entities) % n_clusters
        self.members = [np.flatnonzero(self.clusters == c)
                        for c in range(n_clusters)]
        self.targets = np.stack([rng.permutation(n_clusters)
                                 for _ in range(n_relations)])

        # Each relation covers about half the clusters; every cluster and
        # every relation takes part in at least one mapping
        domain = rng.random((n_relations, n_clusters)) < 0.5
        for r in np.flatnonzero(~domain.any(axis=1)):
            domain[r, rng.integers(n_clusters)] = True
        for c in np.flatnonzero(~domain.any(axis=0)):
            domain[rng.integers(n_relations), c] = True
        self.domain = domain
        self.domain_members = [
            np.concatenate([self.members[c] for c in np.flatnonzero(domain[r])])
            for r in range(n_relations)]

        self.seen = set()


    def _tail(self, head, relation):
        if self.rng.random() < self.violation_rate:
            return int(self.rng.integers(self.n_entities))
        target = self.targets[relation, self.clusters[head]]
        return int(self.rng.choice(self.members[target]))


    def _add(self, triple, out):
        if triple in self.seen:
            return False
        self.seen.add(triple)
        out.append(triple)
        return True


    def coverage_triples(self):
        """ One triple per entity (as head) and per relation. """
        out = []
        for head in range(self.n_entities):
            options = np.flatnonzero(self.domain[:, self.clusters[head]])
            for _ in range(MAX_ATTEMPTS_PER_TRIPLE):
                relation = int(self.rng.choice(options))
                if self._add((head, relation, self._tail(head, relation)), out):
                    break
            else:
                raise data_exceptions.InfeasibleSynthSize(
                    f"could not place a distinct triple for entity {head}")

        used = {r for _, r, _ in out}
        for relation in range(self.n_relations):
            if relation in used:
                continue
            for _ in range(MAX_ATTEMPTS_PER_TRIPLE):
                head = int(self.rng.choice(self.domain_members[relation]))
                if self._add((head, relation, self._tail(head, relation)), out):
                    break
            else:
                raise data_exceptions.InfeasibleSynthSize(
                    f"could not place a distinct triple for relation {relation}")
        return np.array(out, dtype=np.int64).reshape(-1, 3)


    def random_triples(self, n):
        out = []
        attempts = 0
        while len(out) < n:
            attempts += 1
            if attempts > MAX_ATTEMPTS_PER_TRIPLE * max(n, 1):
                raise data_exceptions.InfeasibleSynthSize(
                    f"only {len(out)} of {n} distinct triples found; the "
                    "cluster structure is too small for the requested size")
            relation = int(self.rng.integers(self.n_relations))
            head = int(self.rng.choice(self.domain_members[relation]))
            self._add((head, relation, self._tail(head, relation)), out)
        return np.array(out, dtype=np.int64).reshape(-1, 3)


def _cluster_features(rng, clusters, n_clusters, dim, noise, missing_fraction):
    prototypes = rng.standard_normal((n_clusters, dim))
    vectors = prototypes[clusters] + noise * rng.standard_normal((len(clusters), dim))
    present = rng.random(len(clusters)) >= missing_fraction
    return vectors, present


##################
# Dataset output #
##################
def write_dataset(out_dir, seed, **params):
    """ Write three TSV splits, two RVEC1 files and a manifest holding
        every generator argument. Returns the manifest path.
    """
    out_dir = Path(out_dir)
    kg, visual, textual = synth_kg(seed, **params)
    os.makedirs(out_dir, exist_ok=True)

    manifest = filehandler.KeyValueFile(
        MANIFEST_FILE, header='synthetic knowledge graph manifest',
        data_directory=out_dir)
    for split in ('train', 'valid', 'test'):
        kgdata.write_triples(out_dir / DATASET_FILES[split], kg.split(split),
                             kg.entities, kg.relations)
    featuremodel.write_features(out_dir / DATASET_FILES['visual'], visual)
    featuremodel.write_features(out_dir / DATASET_FILES['textual'], textual)

    record = dict(synth_defaults())
    record.update(params)
    record['seed'] = seed
    for key, name in DATASET_FILES.items():
        record[f'{key}_file'] = name
    path = manifest.save(record)
    print(f"synthmodel: Wrote dataset and manifest to {out_dir}")
    return path


def synth_defaults():
    """ Default generator arguments, keyed by parameter name. """
    return {
        'n_entities': 100,
        'n_relations': 10,
        'n_triples': 1000,
        'feature_dim': 16,
        'feature_noise': 0.1,
        'n_clusters': 0,
        'violation_rate': 0.05,
        'missing_fraction': 0.1,
    }


def load_manifest(path):
    """ Read a manifest back into (seed, generator params). """
    path = Path(path)
    pairs, problems = filehandler.parse_key_values(
        path.read_text(encoding='utf-8'), source=str(path))
    if problems:
        raise data_exceptions.FeatureFormatError(path, '; '.join(problems))

    values = {key: value for _, key, value in pairs}
    try:
        seed = int(values['seed'])
        params = {key: type(default)(values[key])
                  for key, default in synth_defaults().items()}
    except (KeyError, ValueError) as err:
        raise data_exceptions.FeatureFormatError(
            path, f"incomplete manifest: {err}")
    return seed, params
