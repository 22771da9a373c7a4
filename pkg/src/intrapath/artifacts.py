"""Atomic file output, checksums and per-command manifests."""

import contextlib
import hashlib
import json
import os
import tempfile

_UMASK = os.umask(0)
os.umask(_UMASK)

PRODUCERS = {
    "data": "synth",
    "store": "ingest",
    "models": "fit",
    "ensembles": "forecast",
    "backtest": "backtest",
    "gridsearch": "gridsearch",
    "report": "report",
}


class MissingArtifact(RuntimeError):
    def __init__(self, path, producer):
        super().__init__(f"missing artifact {path}; run `intrapath {producer}` first")
        self.path = path
        self.producer = producer


def require(path, kind):
    if not os.path.exists(path):
        raise MissingArtifact(path, PRODUCERS[kind])
    return path


@contextlib.contextmanager
def atomic_open(path, mode="w", **kwargs):
    """Write to a temporary file in the target directory, then rename over ``path``."""
    directory = os.path.dirname(os.path.abspath(path))
    os.makedirs(directory, exist_ok=True)
    fd, tmp = tempfile.mkstemp(dir=directory, prefix=".tmp-", suffix=os.path.basename(path))
    os.chmod(tmp, 0o666 & ~_UMASK)
    try:
        with os.fdopen(fd, mode, **kwargs) as fh:
            yield fh
        os.replace(tmp, path)
    except BaseException:
        with contextlib.suppress(FileNotFoundError):
            os.unlink(tmp)
        raise


def write_text(path, text):
    with atomic_open(path, "w", newline="") as fh:
        fh.write(text)


def write_json(path, obj):
    write_text(path, json.dumps(obj, indent=2, sort_keys=True) + "\n")


def sha256_file(path):
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for block in iter(lambda: fh.read(1 << 20), b""):
            h.update(block)
    return h.hexdigest()


def tree_checksums(root, subdirs):
    """``{relative path: sha256}`` for every file under the given subdirectories."""
    out = {}
    for sub in subdirs:
        base = os.path.join(root, sub)
        for dirpath, dirnames, filenames in os.walk(base):
            dirnames.sort()
            for name in sorted(filenames):
                if name.startswith(".tmp-"):
                    continue
                full = os.path.join(dirpath, name)
                out[os.path.relpath(full, root)] = sha256_file(full)
    return out


def digest(checksums):
    h = hashlib.sha256()
    for rel in sorted(checksums):
        h.update(f"{rel}\0{checksums[rel]}\n".encode())
    return h.hexdigest()


def write_manifest(root, command, config_hash, checksums, extra=None):
    manifest = {
        "command": command,
        "config_hash": config_hash,
        "artifacts": dict(sorted(checksums.items())),
        "digest": digest(checksums),
    }
    if extra:
        manifest.update(extra)
    path = os.path.join(root, "manifests", f"{command}.json")
    write_json(path, manifest)
    return manifest
