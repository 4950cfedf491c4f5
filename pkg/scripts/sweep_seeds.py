#!/usr/bin/env python3
"""
Check that matrix cells do not depend on the seed.
- Runs the whole corpus once per seed, every scenario forced onto that seed
- Counts, per cell, how many seeds disagree with the golden matrix
- Optionally writes the per-seed mismatches as csv

Usage:
  python scripts/sweep_seeds.py
  python scripts/sweep_seeds.py --count 50 --start 1000
  python scripts/sweep_seeds.py --csv output/sweep.csv
"""
import argparse
import sys
from collections import Counter
from pathlib import Path
from dotenv import load_dotenv

import pandas as pd

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from forklab import rng as rngs
from forklab.errors import ForkLabError
from forklab.scenarios.config import load_corpus
from forklab.scenarios.matrix import golden_matrix, run_matrix
from forklab.settings import Settings, configure_logging


def main() -> int:
    load_dotenv()
    settings = Settings.from_env()
    configure_logging(settings.log_level)

    parser = argparse.ArgumentParser(description="Run the matrix under many seeds")
    parser.add_argument("--count", type=int, default=20, help="Number of seeds (default: 20)")
    parser.add_argument("--start", type=int, default=0, help="Root seed the sweep seeds derive from")
    parser.add_argument("--corpus", default=settings.corpus_dir, help="Scenario directory")
    parser.add_argument("--jobs", type=int, default=settings.jobs, help="Worker processes")
    parser.add_argument("--csv", help="Write per-seed mismatches here")
    args = parser.parse_args()

    print("=== SEED SWEEP ===")
    print(f"Seeds: {args.count} (root {args.start})")

    try:
        corpus = load_corpus(args.corpus)
    except ForkLabError as e:
        print(f"❌ {e}")
        return 2
    print(f"✓ Loaded {len(corpus)} scenarios")

    golden = golden_matrix()
    rows = []
    per_cell: Counter = Counter()
    for i, seed in enumerate(rngs.sub_seeds(args.start, args.count), 1):
        print(f"  [{i}/{args.count}] seed {seed}...", end=" ")
        try:
            report = run_matrix(corpus, seed=seed, jobs=args.jobs)
        except ForkLabError as e:
            print(f"❌ {e}")
            return 2
        mismatches = report.mismatches(golden)
        for m in mismatches:
            per_cell[(m["protocol"], m["variant"], m["attack"])] += 1
            rows.append({"seed": seed, **m})
        print("✓" if not mismatches else f"⚠️  {len(mismatches)} cells differ")

    if args.csv:
        path = Path(args.csv)
        path.parent.mkdir(parents=True, exist_ok=True)
        columns = ["seed", "protocol", "variant", "attack", "expected", "got"]
        pd.DataFrame(rows, columns=columns).to_csv(path, index=False, lineterminator="\n")
        print(f"📄 Mismatches written to {path}")

    if not per_cell:
        print(f"\n✅ SWEEP COMPLETE: every cell held under {args.count} seeds")
        return 0
    print(f"\n❌ SWEEP COMPLETE: {len(per_cell)} cells moved")
    for (protocol, variant, attack), n in sorted(per_cell.items()):
        print(f"   {protocol}/{variant} {attack}: {n}/{args.count} seeds")
    return 1


if __name__ == "__main__":
    raise SystemExit(main())
