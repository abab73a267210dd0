import hashlib
import json

SCHEMA_VERSION = 1


class SchemaError(ValueError):
    pass


def check_schema(d, kind=None):
    if d.get("schema_version") != SCHEMA_VERSION:
        raise SchemaError(f"schema_version {d.get('schema_version')!r} != {SCHEMA_VERSION}")
    if kind is not None and d.get("kind") != kind:
        raise SchemaError(f"expected kind {kind!r}, got {d.get('kind')!r}")


def stable_hash(obj):
    blob = json.dumps(obj, sort_keys=True, separators=(",", ":"), default=str)
    return hashlib.sha256(blob.encode()).hexdigest()[:16]


def write_json(path, obj):
    with open(path, "w") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True, default=_default)
        fh.write("\n")


def _default(o):
    import numpy as np

    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.generic):
        return o.item()
    if isinstance(o, complex):
        return [o.real, o.imag]
    raise TypeError(type(o))
