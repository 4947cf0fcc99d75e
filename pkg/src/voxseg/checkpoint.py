"""Model checkpoints: a self-describing little-endian container.

Layout:

    magic "VXCK" | version u16 | architecture block | parameter records | stats block

The architecture block is a length-prefixed (u32) UTF-8 text rendering of the
model's configuration dataclass, one "key = value" line per field in sorted
key order, values as Python literals.  Which dataclass it is follows from the
keys themselves: generators carry encoder_levels, discriminators conv_levels,
so a checkpoint is loadable without side information.

Parameter records: count u32, then per parameter {name length u32 + UTF-8,
rank u32, extents rank x u32, payload f32}.  The running-stats block repeats
the same count+records shape for non-trained buffers (batch-norm statistics).

Writing the same model state twice yields identical bytes.
"""

import ast
import dataclasses
import struct

import numpy as np

from .discriminator import Discriminator, DiscriminatorSpec
from .errors import FormatError
from .generator import Generator

MAGIC = b"VXCK"
FORMAT_VERSION = 1


def _spec_to_text(spec):
    fields = dataclasses.asdict(spec)
    return "".join(f"{k} = {fields[k]!r}\n" for k in sorted(fields))


def _spec_from_text(text):
    fields = {}
    for line in text.splitlines():
        key, _, value = line.partition(" = ")
        if not _:
            raise FormatError(f"malformed spec line {line!r} in checkpoint")
        fields[key] = ast.literal_eval(value)
    if "encoder_levels" in fields:
        from .generator import Di2inSpec

        return Di2inSpec(**{k: tuple(v) if isinstance(v, list) else v for k, v in fields.items()})
    if "conv_levels" in fields:
        return DiscriminatorSpec(**fields)
    raise FormatError(f"checkpoint spec names no known model: keys {sorted(fields)}")


def _write_records(out, records):
    out.append(struct.pack("<I", len(records)))
    for name, arr in records:
        encoded = name.encode("utf-8")
        arr = np.asarray(arr, dtype="<f4")
        out.append(struct.pack("<I", len(encoded)))
        out.append(encoded)
        out.append(struct.pack("<I", arr.ndim))
        out.append(struct.pack(f"<{arr.ndim}I", *arr.shape))
        out.append(np.ascontiguousarray(arr).tobytes())


class _Reader:
    def __init__(self, raw):
        self.raw = raw
        self.pos = 0

    def take(self, n, what):
        if self.pos + n > len(self.raw):
            raise FormatError(f"truncated checkpoint while reading {what}")
        chunk = self.raw[self.pos : self.pos + n]
        self.pos += n
        return chunk

    def u32(self, what):
        return struct.unpack("<I", self.take(4, what))[0]


def _read_records(reader, what):
    records = []
    for _ in range(reader.u32(f"{what} count")):
        name = reader.take(reader.u32(f"{what} name length"), f"{what} name").decode("utf-8")
        rank = reader.u32(f"{what} rank")
        shape = struct.unpack(f"<{rank}I", reader.take(4 * rank, f"{what} extents"))
        count = int(np.prod(shape, dtype=np.int64)) if rank else 1
        payload = reader.take(4 * count, f"{what} payload for {name!r}")
        records.append((name, np.frombuffer(payload, dtype="<f4").reshape(shape).copy()))
    return records


def checkpoint_bytes(model):
    """Serialize spec, parameters, and running statistics of a model."""
    out = [MAGIC, struct.pack("<H", FORMAT_VERSION)]
    text = _spec_to_text(model.spec).encode("utf-8")
    out.append(struct.pack("<I", len(text)))
    out.append(text)
    _write_records(out, [(n, p.data) for n, p in model.named_parameters()])
    _write_records(out, list(model.named_buffers()))
    return b"".join(out)


def save_checkpoint(model, path):
    with open(path, "wb") as f:
        f.write(checkpoint_bytes(model))


def load_checkpoint(path):
    """Rebuild a Generator or Discriminator with the stored state."""
    with open(path, "rb") as f:
        reader = _Reader(f.read())
    magic = reader.take(4, "magic")
    if magic != MAGIC:
        raise FormatError(f"bad magic {magic!r}, expected {MAGIC!r}")
    version = struct.unpack("<H", reader.take(2, "version"))[0]
    if version != FORMAT_VERSION:
        raise FormatError(f"unsupported checkpoint version {version}, expected {FORMAT_VERSION}")
    text = reader.take(reader.u32("spec length"), "spec block").decode("utf-8")
    spec = _spec_from_text(text)
    params = _read_records(reader, "parameter")
    stats = _read_records(reader, "running-stats")
    if reader.pos != len(reader.raw):
        raise FormatError(f"{len(reader.raw) - reader.pos} trailing bytes after checkpoint records")

    model = Generator(spec) if hasattr(spec, "encoder_levels") else Discriminator(spec)
    current = dict(model.named_parameters())
    if len(params) != len(current):
        raise FormatError(
            f"checkpoint has {len(params)} parameters, model expects {len(current)}"
        )
    for name, values in params:
        if name not in current:
            raise FormatError(f"checkpoint parameter {name!r} not present in model")
        tensor = current[name]
        if tensor.data.shape != values.shape:
            raise FormatError(
                f"parameter {name!r} shape {values.shape} does not match model {tensor.data.shape}"
            )
        tensor.data[...] = values
    buffers = dict(model.named_buffers())
    if len(stats) != len(buffers):
        raise FormatError(
            f"checkpoint has {len(stats)} running-stats records, model expects {len(buffers)}"
        )
    for name, values in stats:
        if name not in buffers or buffers[name].shape != values.shape:
            raise FormatError(f"running-stats record {name!r} does not match model")
        buffers[name][...] = values
    return model
