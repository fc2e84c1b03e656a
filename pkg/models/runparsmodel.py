""" Model for storing run parameters.

    Every key a run understands lives in RunParsModel.fields with its
    type and default: the TrainConfig fields plus dataset paths, the run
    directory, the ablation mode and the worker count. Files are flat
    `key = value` text with `#` comments.
"""

############
# IMPORTS  #
############
# Import system packages
from dataclasses import fields as dataclass_fields
from dataclasses import replace
from pathlib import Path

# Import custom modules
from exceptions import config_exceptions
from functions import general
from models import evalrank
from models import featuremodel
from models import filehandler
from models import kgdata
from models import synthmodel
from models import trainer


TYPES = {'bool': bool, 'int': int, 'float': float, 'str': str}
PATH_KEYS = ('train_file', 'valid_file', 'test_file', 'visual_file',
             'textual_file')
OPTIONAL_PATHS = ('visual_file', 'textual_file')
TRAINING_ABLATIONS = {
    evalrank.AblationMode.STRUCTURE_ONLY: {'structure_only': True},
    evalrank.AblationMode.NO_DISTILL: {'lambda_d': 0.0},
    evalrank.AblationMode.TAIL_ONLY: {'tail_only': True},
}


def _train_fields():
    return {f.name: {'type': type(f.default).__name__, 'value': f.default}
            for f in dataclass_fields(trainer.TrainConfig)}


#########
# BEGIN #
#########
class RunParsModel:
    # Define dictionary items
    fields = {
        # Training and evaluation variables
        **_train_fields(),

        # Dataset variables (relative file names resolve against data_dir)
        'data_dir': {'type': 'str', 'value': '.'},
        'train_file': {'type': 'str', 'value': synthmodel.DATASET_FILES['train']},
        'valid_file': {'type': 'str', 'value': synthmodel.DATASET_FILES['valid']},
        'test_file': {'type': 'str', 'value': synthmodel.DATASET_FILES['test']},
        'visual_file': {'type': 'str', 'value': synthmodel.DATASET_FILES['visual']},
        'textual_file': {'type': 'str', 'value': synthmodel.DATASET_FILES['textual']},

        # Run variables
        'run_dir': {'type': 'str', 'value': 'runs/radd'},
        'ablation_mode': {'type': 'str', 'value': 'full'},
        'threads': {'type': 'int', 'value': 1},
    }


    def __init__(self, path=None):
        self.values = {key: spec['value'] for key, spec in self.fields.items()}
        self.source = None
        if path is not None:
            self.load(path)


    def load(self, path):
        """ Read key = value pairs from file. Every problem in the file
            is collected and raised together.
        """
        path = Path(path)
        print(f"runparsmodel: Reading run parameters from {path}")
        if not path.exists():
            raise config_exceptions.ConfigError(f"config file not found: {path}")
        self.source = path
        self.update_from_text(path.read_text(encoding='utf-8'), str(path))


    def update_from_text(self, text, source='<config>'):
        pairs, problems = filehandler.parse_key_values(text, source)
        for number, key, raw in pairs:
            problem = self._assign(key, raw, f"{source} line {number}")
            if problem:
                problems.append(problem)
        if problems:
            raise config_exceptions.ConfigError(problems)


    def apply_overrides(self, overrides):
        """ Apply `key=value` strings, as given to --set. """
        problems = []
        for item in overrides:
            if '=' not in item:
                problems.append(f"--set {item!r}: expected key=value")
                continue
            key, raw = (part.strip() for part in item.split('=', 1))
            problem = self._assign(key, raw, '--set')
            if problem:
                problems.append(problem)
        if problems:
            raise config_exceptions.ConfigError(problems)


    def _assign(self, key, raw, where):
        if key not in self.fields:
            return f"{where}: unknown key {key!r}"
        try:
            self.values[key] = general.coerce_value(
                raw, TYPES[self.fields[key]['type']])
        except ValueError as err:
            return f"{where}: {key}: {err}"
        return None


    def set(self, key, value):
        """ Set a variable value. """
        if key not in self.fields:
            raise ValueError(f"runparsmodel: Unknown key {key!r}")
        kind = TYPES[self.fields[key]['type']]
        ok = isinstance(value, kind) and not (kind is not bool and
                                              isinstance(value, bool))
        if kind is float and isinstance(value, int) and not isinstance(value, bool):
            value = float(value)
            ok = True
        if not ok:
            raise ValueError(f"runparsmodel: {key} expects {kind.__name__}, "
                             f"got {type(value).__name__}")
        self.values[key] = value


    def get(self, key):
        return self.values[key]


    ##############
    # Validation #
    ##############
    @property
    def ablation_mode(self):
        return evalrank.AblationMode.from_name(self.values['ablation_mode'])


    def problems(self, check_paths=True, n_entities=None):
        found = []
        try:
            mode = self.ablation_mode
        except ValueError as err:
            found.append(str(err))
            mode = evalrank.AblationMode.FULL
        if self.values['threads'] < 1:
            found.append(f"threads must be >= 1, got {self.values['threads']}")
        found.extend(self.to_train_config(mode).problems(n_entities))
        if check_paths:
            for key, path in self.paths().items():
                if path is None:
                    continue
                if not path.exists():
                    found.append(f"{key}: file not found: {path}")
        return found


    def validate(self, check_paths=True, n_entities=None):
        problems = self.problems(check_paths, n_entities)
        if problems:
            raise config_exceptions.ConfigError(problems)
        return self


    ###############
    # Conversions #
    ###############
    def to_train_config(self, mode=None):
        """ Immutable TrainConfig with the ablation mode folded in. """
        mode = self.ablation_mode if mode is None else mode
        config = trainer.TrainConfig(**{f.name: self.values[f.name]
                                        for f in dataclass_fields(trainer.TrainConfig)})
        return replace(config, **TRAINING_ABLATIONS.get(mode, {}))


    def paths(self):
        """ Resolved dataset paths. Empty optional feature paths map to
            None and mean "all features absent".
        """
        base = Path(self.values['data_dir'])
        resolved = {}
        for key in PATH_KEYS:
            name = self.values[key]
            if not name and key in OPTIONAL_PATHS:
                resolved[key] = None
                continue
            path = Path(name)
            resolved[key] = path if path.is_absolute() else base / path
        return resolved


    def load_dataset(self):
        """ (KnowledgeGraph, EntityFeatures) from the configured paths. """
        paths = self.paths()
        kg = kgdata.KnowledgeGraph.from_files(
            paths['train_file'], paths['valid_file'], paths['test_file'])
        stores = []
        for key in OPTIONAL_PATHS:
            if paths[key] is None:
                stores.append(featuremodel.ModalityFeatureStore.absent(kg.n_entities))
            else:
                stores.append(featuremodel.load_features(paths[key], kg.n_entities))
        return kg, featuremodel.EntityFeatures(*stores)


    def to_text(self):
        return filehandler.format_key_values(
            self.values, header='resolved run configuration')


    def save(self, directory, filename='config.txt'):
        """ Write every key, defaults included, in sorted order. """
        out = filehandler.KeyValueFile(filename,
                                       header='resolved run configuration',
                                       data_directory=directory)
        return out.save(self.values)
