import os
import sys
import json
import hashlib
from collections import OrderedDict

import numpy as np

from robust_hedge import log
from robust_hedge.errors import EXIT_CONFIG


def cache(func):
    """Memoization decorator similar to functools.cache (Python 3.9+)"""
    memo = {}

    def wrapper(*args, **kwargs):
        kwargs = OrderedDict(sorted(kwargs.items()))
        key = str({"args": args, "kwargs": kwargs})
        if key not in memo:
            memo[key] = func(*args, **kwargs)
        return memo[key]

    return wrapper


def user_error(msg):
    print("%s: " % os.path.basename(sys.argv[0]) + msg, file=sys.stderr)
    sys.exit(EXIT_CONFIG)


def exit_success():
    sys.exit(0)


def mkdir(path):
    if not os.path.exists(path):
        log.info("Creating directory: '{}'".format(path))
        os.makedirs(path)
    else:
        log.debug("Directory already exists: '{}'".format(path))


def read_file(path):
    try:
        with open(path, "r") as f:
            return f.read()
    except FileNotFoundError:
        return None


def save_file(path, data):
    parent = os.path.dirname(path)
    if parent:
        mkdir(parent)
    with open(path, "w") as f:
        f.write(data)


def jsonable(data):
    """Convert numpy containers and scalars into plain JSON types"""
    if isinstance(data, dict):
        return OrderedDict((str(k), jsonable(v)) for k, v in data.items())
    if isinstance(data, (list, tuple)):
        return [jsonable(x) for x in data]
    if isinstance(data, np.ndarray):
        return jsonable(data.tolist())
    if isinstance(data, np.bool_):
        return bool(data)
    if isinstance(data, np.integer):
        return int(data)
    if isinstance(data, np.floating):
        data = float(data)
    if isinstance(data, float) and not np.isfinite(data):
        # JSON has no NaN/inf
        return None
    return data


def pretty(data):
    return json.dumps(jsonable(data), indent=2)


def parse_json(text):
    return json.loads(text, object_pairs_hook=OrderedDict)


def read_json(path):
    try:
        with open(path, "r") as f:
            return parse_json(f.read())
    except FileNotFoundError:
        return None


def write_json(path, data):
    data = pretty(data) + "\n"
    return save_file(path, data)


def canonical_hash(data):
    """sha256 of data serialized with sorted keys, independent of dict order"""
    text = json.dumps(jsonable(data), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(text.encode("utf-8")).hexdigest()


def file_hash(path):
    sha = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 16), b""):
            sha.update(chunk)
    return sha.hexdigest()


def write_csv(path, header, columns):
    """Write equal-length columns as CSV with round-trip float precision"""
    parent = os.path.dirname(path)
    if parent:
        mkdir(parent)
    lines = [",".join(header)]
    if columns:
        rows = np.column_stack([np.asarray(c, dtype=float) for c in columns])
        for row in rows:
            lines.append(",".join(repr(float(x)) for x in row))
    with open(path, "w") as f:
        f.write("\n".join(lines) + "\n")


def read_csv(path):
    """Returns (header, 2-D array); an empty body gives zero rows"""
    with open(path, "r") as f:
        lines = [line.strip() for line in f if line.strip()]
    if not lines:
        return [], np.zeros((0, 0))
    header = lines[0].split(",")
    rows = [[float(x) for x in line.split(",")] for line in lines[1:]]
    if not rows:
        return header, np.zeros((0, len(header)))
    return header, np.array(rows, dtype=float)


def column_print(data):
    width = 0
    for key in data:
        if len(key) > width:
            width = len(key)

    for key, value in data.items():
        fill = " " * (width - len(key))
        print("{}{} : {}".format(key, fill, value))
