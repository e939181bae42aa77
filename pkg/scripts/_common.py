import argparse
import json
import sys
from pathlib import Path

RESULTS = Path(__file__).resolve().parent.parent / "results"


def parser(description):
    ap = argparse.ArgumentParser(description=description)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", type=Path, help="JSON output path (default: results/<script>.json)")
    return ap


def dump(name, payload, out=None):
    dest = out or RESULTS / f"{name}.json"
    dest.parent.mkdir(parents=True, exist_ok=True)
    dest.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")
    json.dump(payload, sys.stdout, indent=2, sort_keys=True)
    print(f"\nwrote {dest}")
