"""Scriptable stand-in for an external forecaster process.

Launched as ``python fake_sidecar.py --mode <mode>``; each mode exercises one
client-facing behaviour (clean service, broken handshakes, protocol
violations, hangs).  Kept dependency-free so the child starts fast.
"""

from __future__ import annotations

import argparse
import json
import sys
import time

PROTOCOL = "odca-forecast/1"


def emit(obj) -> None:
    sys.stdout.write(json.dumps(obj) + "\n")
    sys.stdout.flush()


def samples_for(req: dict) -> list[list[float]]:
    base = req["context"][-1]
    return [[base + 0.01 * (i + 1) + 0.1 * (j + 1)
             for j in range(req["horizon"])]
            for i in range(req["n_samples"])]


def main() -> int:
    parser = argparse.ArgumentParser()
    parser.add_argument("--mode", default="ok")
    mode = parser.parse_args().mode

    if mode == "bad-handshake":
        emit({"protocol": "other/9"})
        return 0
    if mode == "error-handshake":
        emit({"error": "model load failure: no such model"})
        return 1
    emit({"protocol": PROTOCOL})
    if mode == "die-after-handshake":
        return 3

    for line in sys.stdin:
        line = line.strip()
        if not line:
            continue
        try:
            req = json.loads(line)
        except json.JSONDecodeError:
            emit({"id": None, "error": "parse"})
            continue
        if mode == "slow":
            time.sleep(5.0)
        if mode == "wrong-id":
            emit({"id": req["id"] + 1000, "samples": samples_for(req)})
        elif mode == "ragged":
            emit({"id": req["id"], "samples": [[1.0, 2.0], [3.0]]})
        elif mode == "short-shape":
            trimmed = [row[:-1] for row in samples_for(req)]
            emit({"id": req["id"], "samples": trimmed})
        elif mode == "junk":
            sys.stdout.write("this is not json\n")
            sys.stdout.flush()
        elif mode == "error-on-odd":
            if req["id"] % 2 == 1:
                emit({"id": req["id"], "error": "synthetic failure"})
            else:
                emit({"id": req["id"], "samples": samples_for(req)})
        else:
            emit({"id": req["id"], "samples": samples_for(req)})
    return 0


if __name__ == "__main__":
    sys.exit(main())
