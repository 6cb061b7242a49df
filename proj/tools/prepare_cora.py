#!/usr/bin/env python3
"""Convert the LINQS Cora release (cora.content, cora.cites) to caps2ne inputs.

Writes into OUT_DIR:
  cora.edges     "#nodes N" header, then "u v" per undirected edge
  cora.labels    "node class"
  cora.features  "node index value" for every nonzero bag-of-words entry
  cora.ids       "node paper_id"
  cora.classes   "class name"
Node ids follow the row order of cora.content; class ids follow sorted names.
"""

import argparse
from pathlib import Path


def main() -> None:
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("src", type=Path, help="directory holding cora.content and cora.cites")
    ap.add_argument("out", type=Path, help="output directory")
    args = ap.parse_args()

    rows = [line.split() for line in (args.src / "cora.content").read_text().splitlines() if line.strip()]
    ids = {r[0]: i for i, r in enumerate(rows)}
    classes = {name: c for c, name in enumerate(sorted({r[-1] for r in rows}))}

    edges = set()
    dropped = 0
    for line in (args.src / "cora.cites").read_text().splitlines():
        parts = line.split()
        if len(parts) != 2:
            continue
        a, b = (ids.get(p) for p in parts)
        if a is None or b is None or a == b:
            dropped += 1
            continue
        edges.add((min(a, b), max(a, b)))

    args.out.mkdir(parents=True, exist_ok=True)
    with open(args.out / "cora.edges", "w") as f:
        f.write(f"#nodes {len(rows)}\n")
        f.writelines(f"{u} {v}\n" for u, v in sorted(edges))
    with open(args.out / "cora.labels", "w") as f:
        f.writelines(f"{i} {classes[r[-1]]}\n" for i, r in enumerate(rows))
    with open(args.out / "cora.features", "w") as f:
        for i, r in enumerate(rows):
            f.writelines(f"{i} {j} {x}\n" for j, x in enumerate(r[1:-1]) if float(x) != 0.0)
    with open(args.out / "cora.ids", "w") as f:
        f.writelines(f"{i} {r[0]}\n" for i, r in enumerate(rows))
    with open(args.out / "cora.classes", "w") as f:
        f.writelines(f"{c} {name}\n" for name, c in sorted(classes.items(), key=lambda kv: kv[1]))

    print(f"{len(rows)} nodes, {len(edges)} undirected edges ({dropped} citation lines dropped), "
          f"{len(rows[0]) - 2} features, {len(classes)} classes")


if __name__ == "__main__":
    main()
