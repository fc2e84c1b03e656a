""" Training checkpoints and the RADDCKPT file format.

    Layout (little-endian):
        8 bytes  magic "RADDCKPT"
        u32      format version
        u32      segment count
        segments, each:
            u8   kind (1 = text, 2 = float32 tensor)
            u32  name length, then the UTF-8 name
            text:   u64 byte length, then UTF-8 text
            tensor: u32 ndim, u64 x ndim shape, then float32 values

    Text segments are 'config' (canonical key = value), 'meta' (key =
    value) and 'history' (TSV). Tensor names are grouped by prefix:
    retriever/, denoiser/, ema/, adam_retriever/{m,v}/, adam_denoiser/{m,v}/.
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
from exceptions import version_exceptions
from functions import general
from models import filehandler
from models import historymodel


#############
# Constants #
#############
MAGIC = b'RADDCKPT'
FORMAT_VERSION = 1
HEADER = struct.Struct('<8sII')
KIND_TEXT = 1
KIND_TENSOR = 2
TEXT_SEGMENTS = ('config', 'meta', 'history')

RETRIEVER_TENSORS = (
    'structural', 'relation_phase', 'gate_logits', 'proj_visual_w',
    'proj_visual_b', 'proj_textual_w', 'proj_textual_b', 'default_visual',
    'default_textual',
)


##############
# Checkpoint #
##############
class Checkpoint:
    """ Config snapshot, meta counters, validation history and every
        tensor as float32. Equal checkpoints serialize to equal bytes.
    """
    def __init__(self, config_text, meta, history, tensors):
        self.config_text = config_text
        self.meta = {key: str(value) for key, value in meta.items()}
        self.history = history
        self.tensors = {name: np.ascontiguousarray(arr, dtype=np.float32)
                        for name, arr in tensors.items()}


    def group(self, prefix):
        """ Tensors under `prefix/`, keyed without the prefix. """
        start = len(prefix) + 1
        return {name[start:]: arr for name, arr in self.tensors.items()
                if name.startswith(prefix + '/')}


    def meta_int(self, key):
        return int(self.meta[key])


    def meta_float(self, key):
        return float(self.meta[key])


    def meta_bool(self, key):
        return general.parse_bool(self.meta[key])


    def hash(self, prefix):
        return general.tensor_hash(self.group(prefix))


    def __eq__(self, other):
        if not isinstance(other, Checkpoint):
            return NotImplemented
        return (self.config_text == other.config_text
                and self.meta == other.meta
                and self.history == other.history
                and list(self.tensors) == list(other.tensors)
                and all(np.array_equal(a, other.tensors[name])
                        for name, a in self.tensors.items()))


def expected_shapes(meta):
    """ Tensor name -> shape implied by the architecture fields of meta. """
    get = lambda key: int(meta[key])
    n_entities, d = get('n_entities'), get('d')
    kge_relations = get('kge_relations')
    width = 2 * d

    retriever = {
        'structural': (n_entities, width),
        'relation_phase': (kge_relations, d),
        'gate_logits': (kge_relations, 3),
        'proj_visual_w': (get('visual_dim'), width),
        'proj_visual_b': (width,),
        'proj_textual_w': (get('textual_dim'), width),
        'proj_textual_b': (width,),
        'default_visual': (width,),
        'default_textual': (width,),
    }

    d_time, d_dir = get('d_time'), get('d_dir')
    sizes = ([3 * width + d_time + d_dir]
             + [get('hidden_mult') * width] * get('hidden_layers')
             + [n_entities])
    denoiser = {'token_table': (n_entities + 1, width), 'direction': (2, d_dir)}
    for i, (n_in, n_out) in enumerate(zip(sizes[:-1], sizes[1:])):
        denoiser[f'mlp.{i}.weight'] = (n_in, n_out)
        denoiser[f'mlp.{i}.bias'] = (n_out,)

    shapes = {}
    for prefix, group in (('retriever', retriever), ('denoiser', denoiser),
                          ('ema', denoiser)):
        shapes.update({f'{prefix}/{k}': v for k, v in group.items()})
    for prefix, group in (('adam_retriever', retriever),
                          ('adam_denoiser', denoiser)):
        for moment in ('m', 'v'):
            shapes.update({f'{prefix}/{moment}/{k}': v for k, v in group.items()})
    return shapes


def validate_shapes(ckpt, path='<checkpoint>'):
    try:
        shapes = expected_shapes(ckpt.meta)
    except (KeyError, ValueError) as err:
        raise version_exceptions.CheckpointFormatError(
            path, f"meta segment lacks architecture field {err}")
    for name, shape in shapes.items():
        if name not in ckpt.tensors:
            raise version_exceptions.CheckpointShapeMismatch(
                path, name, shape, 'missing')
        if ckpt.tensors[name].shape != tuple(shape):
            raise version_exceptions.CheckpointShapeMismatch(
                path, name, tuple(shape), ckpt.tensors[name].shape)
    extra = sorted(set(ckpt.tensors) - set(shapes))
    if extra:
        raise version_exceptions.CheckpointFormatError(
            path, f"unexpected tensors {extra}")


def check_compatible(ckpt, n_entities, n_relations, visual_dim, textual_dim,
                     path='<checkpoint>'):
    """ Raise if the checkpoint was trained on a differently sized graph
        or feature set.
    """
    for key, found in (('n_entities', n_entities), ('n_relations', n_relations),
                       ('visual_dim', visual_dim), ('textual_dim', textual_dim)):
        stored = ckpt.meta_int(key)
        if stored != found:
            raise version_exceptions.CheckpointShapeMismatch(
                path, key, stored, found)


###########
# Writing #
###########
def to_bytes(ckpt):
    parts = [HEADER.pack(MAGIC, FORMAT_VERSION,
                         len(TEXT_SEGMENTS) + len(ckpt.tensors))]
    texts = {
        'config': ckpt.config_text,
        'meta': filehandler.format_key_values(ckpt.meta),
        'history': ckpt.history.to_tsv(),
    }
    for name in TEXT_SEGMENTS:
        payload = texts[name].encode('utf-8')
        parts.append(_name_bytes(KIND_TEXT, name))
        parts.append(struct.pack('<Q', len(payload)))
        parts.append(payload)
    for name, arr in ckpt.tensors.items():
        parts.append(_name_bytes(KIND_TENSOR, name))
        parts.append(struct.pack('<I', arr.ndim))
        parts.append(struct.pack(f'<{arr.ndim}Q', *arr.shape))
        parts.append(arr.astype('<f4').tobytes())
    return b''.join(parts)


def _name_bytes(kind, name):
    encoded = name.encode('utf-8')
    return struct.pack('<BI', kind, len(encoded)) + encoded


def save_checkpoint(ckpt, path):
    path = Path(path)
    path.write_bytes(to_bytes(ckpt))
    print(f"checkpoint: Saved {len(ckpt.tensors)} tensors to {path}")
    return path


###########
# Reading #
###########
class _Reader:
    """ Cursor over checkpoint bytes; any read past the end is truncation. """
    def __init__(self, data, path):
        self.data = data
        self.path = path
        self.offset = 0


    def take(self, n):
        if self.offset + n > len(self.data):
            raise version_exceptions.CheckpointFormatError(
                self.path, f"truncated at byte {self.offset}, wanted {n} more")
        chunk = self.data[self.offset:self.offset + n]
        self.offset += n
        return chunk


    def unpack(self, fmt):
        return struct.unpack(fmt, self.take(struct.calcsize(fmt)))


def from_bytes(data, path='<checkpoint>'):
    reader = _Reader(data, path)
    magic, version, n_segments = reader.unpack('<8sII')
    if magic != MAGIC:
        raise version_exceptions.CheckpointFormatError(
            path, f"bad magic {magic!r}")
    if version != FORMAT_VERSION:
        raise version_exceptions.CheckpointVersionMismatch(
            path, version, FORMAT_VERSION)

    texts = {}
    tensors = {}
    for _ in range(n_segments):
        kind, name_length = reader.unpack('<BI')
        name = reader.take(name_length).decode('utf-8')
        if kind == KIND_TEXT:
            (length,) = reader.unpack('<Q')
            texts[name] = reader.take(length).decode('utf-8')
        elif kind == KIND_TENSOR:
            (ndim,) = reader.unpack('<I')
            shape = reader.unpack(f'<{ndim}Q')
            count = int(np.prod(shape, dtype=np.int64))
            raw = reader.take(4 * count)
            tensors[name] = np.frombuffer(raw, dtype='<f4').reshape(shape).copy()
        else:
            raise version_exceptions.CheckpointFormatError(
                path, f"unknown segment kind {kind} for {name!r}")
    if reader.offset != len(data):
        raise version_exceptions.CheckpointFormatError(
            path, f"{len(data) - reader.offset} trailing bytes")

    missing = [name for name in TEXT_SEGMENTS if name not in texts]
    if missing:
        raise version_exceptions.CheckpointFormatError(
            path, f"missing text segments {missing}")
    pairs, problems = filehandler.parse_key_values(texts['meta'], 'meta')
    if problems:
        raise version_exceptions.CheckpointFormatError(path, '; '.join(problems))

    ckpt = Checkpoint(texts['config'], {key: value for _, key, value in pairs},
                      historymodel.HistoryWrangler.from_tsv(texts['history']),
                      tensors)
    validate_shapes(ckpt, path)
    return ckpt


def load_checkpoint(path):
    path = Path(path)
    ckpt = from_bytes(path.read_bytes(), path)
    print(f"checkpoint: Loaded {path.name} (epoch {ckpt.meta.get('epoch')})")
    return ckpt
