#!/usr/bin/env python3
"""Convert MITRE CWE CSV view exports into the taxonomy JSON consumed by auditcwe.

Usage:
    import_cwe.py --view 1000.csv --hardware-view 1194.csv \
        --out data/cwe/cwe1000.json --hardware-out data/cwe/hardware.json

Only ChildOf relations scoped to the exported view are kept.  Parents whose
ordinal is Primary are listed first.  "Compound" entries are mapped to Base.
"""

import argparse
import csv
import json
import re
import sys

CHILD_OF = re.compile(r"NATURE:ChildOf:CWE ID:(\d+):VIEW ID:(\d+)(?::ORDINAL:(\w+))?")
ABSTRACTIONS = {"Pillar": "Pillar", "Class": "Class", "Base": "Base", "Variant": "Variant", "Compound": "Base"}


def read_rows(path):
    csv.field_size_limit(sys.maxsize)
    with open(path, newline="", encoding="utf-8") as fh:
        return list(csv.DictReader(fh))


def first_sentence(text):
    text = " ".join(text.split())
    m = re.match(r"(.+?[.!?])(\s|$)", text)
    return m.group(1) if m else text


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--view", required=True, help="CSV export of the research view (e.g. 1000.csv)")
    ap.add_argument("--view-id", default="1000")
    ap.add_argument("--view-name", default="CWE-1000: Research Concepts")
    ap.add_argument("--hardware-view", help="CSV export of the hardware design view (e.g. 1194.csv)")
    ap.add_argument("--out", required=True)
    ap.add_argument("--hardware-out")
    args = ap.parse_args()

    rows = read_rows(args.view)
    hardware = set()
    if args.hardware_view:
        hardware = {r["CWE-ID"] for r in read_rows(args.hardware_view)}

    ids = [r["CWE-ID"] for r in rows]
    known = set(ids)
    parents = {}
    for r in rows:
        primary, other = [], []
        for pid, view, ordinal in CHILD_OF.findall(r["Related Weaknesses"]):
            if view != args.view_id or pid not in known:
                continue
            bucket = primary if ordinal == "Primary" else other
            if pid not in primary and pid not in other:
                bucket.append(pid)
        parents[r["CWE-ID"]] = primary + other

    children = {i: [] for i in ids}
    for i in ids:
        for p in parents[i]:
            children[p].append(i)

    nodes = []
    for r in rows:
        i = r["CWE-ID"]
        nodes.append({
            "id": f"CWE-{i}",
            "name": r["Name"],
            "description": first_sentence(r["Description"]),
            "abstraction": ABSTRACTIONS[r["Weakness Abstraction"]],
            "parents": [f"CWE-{p}" for p in parents[i]],
            "children": [f"CWE-{c}" for c in children[i]],
            "hardware": i in hardware,
        })

    with open(args.out, "w", encoding="utf-8") as fh:
        json.dump({"view": args.view_name, "nodes": nodes}, fh, indent=1, ensure_ascii=False)
        fh.write("\n")
    if args.hardware_out:
        hw = sorted((f"CWE-{i}" for i in hardware if i in known), key=lambda s: int(s[4:]))
        with open(args.hardware_out, "w", encoding="utf-8") as fh:
            json.dump(hw, fh, indent=1)
            fh.write("\n")
    print(f"{len(nodes)} nodes, {sum(1 for n in nodes if not n['parents'])} roots, "
          f"{len(hardware & known)} hardware", file=sys.stderr)


if __name__ == "__main__":
    main()
