"""Stable hashing of experiment configurations and run manifests."""

import hashlib
import json
import os
from base64 import urlsafe_b64encode
from datetime import datetime, timezone

VERSION = "0.1.0"

def stable_repr(value):
    """Produce a 'repr' string for a value that does not depend on dict or
    set ordering"""
    if isinstance(value, dict):
        return "{%s}" % ", ".join("%s: %s" % (stable_repr(key), stable_repr(value))
                                  for key, value in sorted(value.items()))
    elif isinstance(value, (set, frozenset)):
        return "%s(%s)" % (value.__class__.__name__, stable_repr(sorted(value)))
    elif isinstance(value, list):
        return "[%s]" % ", ".join(stable_repr(value) for value in value)
    elif isinstance(value, tuple):
        return "(%s)" % ", ".join(stable_repr(value) for value in value)
    elif isinstance(value, float):
        return repr(float(value))
    return repr(value)

def config_digest(data):
    return hashlib.sha256(stable_repr(data).encode("utf-8"))

def now():
    return datetime.now(timezone.utc).isoformat(timespec="seconds")

class RunManifest(object):
    """What a run was given and what it wrote.

    The digest covers the validated configuration only, so two runs of the
    same configuration and seed share it; timestamps differ.
    """

    def __init__(self, command, config, seed):
        self.command = command
        self.config = config
        self.seed = seed
        self.digest = config_digest(config)
        self.version = VERSION
        self.started = now()
        self.finished = None
        self.outputs = []

    def __repr__(self):
        return "RunManifest(%s, %s, seed=%s)" % (self.command, self, self.seed)

    def __str__(self):
        return urlsafe_b64encode(self.digest.digest()).decode("ascii").rstrip("=")

    @property
    def config_hash(self):
        return self.digest.hexdigest()

    def add(self, path):
        self.outputs.append(os.path.basename(path))
        return path

    def to_dict(self):
        return {"command": self.command, "config_hash": self.config_hash,
                "seed": self.seed, "version": self.version,
                "started": self.started, "finished": self.finished,
                "outputs": sorted(self.outputs)}

    def write(self, directory):
        self.finished = now()
        path = os.path.join(directory, "manifest.json")
        with open(path, "w") as f:
            json.dump(self.to_dict(), f, indent=1, sort_keys=True)
            f.write("\n")
        return path
