#!/usr/bin/env python3
"""Reference external objective speaking the addtree line protocol.

Reads one JSON request per line from stdin:
    {"path": ["0", "0"], "params": {"r8": 0.0, "x4": 0.0}}
and writes one JSON response per line to stdout:
    {"y": 0.1}

The function implemented here is the built-in synthetic tree objective
(quadratic leaves with shared offsets), so it can be used to check that
the external protocol and the builtin evaluator agree.
"""
import json
import sys

CONSTANT = {("0", "0"): 0.1, ("0", "1"): 0.2, ("1", "0"): 0.3, ("1", "1"): 0.4}
LEAF_VAR = {("0", "0"): "x4", ("0", "1"): "x5", ("1", "0"): "x6", ("1", "1"): "x7"}
SHARED_VAR = {"0": "r8", "1": "r9"}


def main():
    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        request = json.loads(line)
        path = tuple(request["path"])
        params = request["params"]
        x = params[LEAF_VAR[path]]
        r = params[SHARED_VAR[path[0]]]
        y = x * x + CONSTANT[path] + r
        sys.stdout.write(json.dumps({"y": y}) + "\n")
        sys.stdout.flush()


if __name__ == "__main__":
    main()
