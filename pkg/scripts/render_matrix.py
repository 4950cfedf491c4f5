#!/usr/bin/env python3
"""
Run the scenario corpus once and write the matrix in every report format.
- Loads every scenario under the corpus directory
- Runs the matrix (optionally with one seed for all scenarios)
- Writes matrix.{json,csv,md,pdf} to the output directory
- Compares against the golden matrix

Usage:
  python scripts/render_matrix.py
  python scripts/render_matrix.py --seed 7 --output-dir output/matrix-7
  python scripts/render_matrix.py --jobs 4
"""
import argparse
import sys
from pathlib import Path
from dotenv import load_dotenv

# Add project root to path
sys.path.insert(0, str(Path(__file__).parent.parent))

from forklab.errors import ForkLabError
from forklab.scenarios.config import load_corpus
from forklab.scenarios.export import FORMATS, export_report
from forklab.scenarios.matrix import golden_matrix, run_matrix
from forklab.settings import Settings, configure_logging


def main() -> int:
    load_dotenv()
    settings = Settings.from_env()
    configure_logging(settings.log_level)

    parser = argparse.ArgumentParser(description="Render the attack matrix in every report format")
    parser.add_argument("--corpus", default=settings.corpus_dir, help="Scenario directory")
    parser.add_argument("--seed", type=int, default=settings.seed_override, help="Override every scenario seed")
    parser.add_argument("--output-dir", default="output/matrix", help="Output directory")
    parser.add_argument("--jobs", type=int, default=settings.jobs, help="Worker processes")
    args = parser.parse_args()

    print("=== MATRIX RENDER ===")
    print(f"Corpus: {args.corpus}")
    print(f"Seed: {args.seed if args.seed is not None else 'per scenario'}")
    print(f"Output: {args.output_dir}")

    try:
        corpus = load_corpus(args.corpus)
        print(f"✓ Loaded {len(corpus)} scenarios")
        print(f"\n🔬 Running matrix...")
        report = run_matrix(corpus, seed=args.seed, jobs=args.jobs)
    except ForkLabError as e:
        print(f"❌ {e}")
        return 2

    print(f"✓ {len(report.rows)} rows")

    output_path = Path(args.output_dir)
    print(f"\n📄 Writing reports...")
    written = 0
    for fmt in FORMATS:
        try:
            path = export_report(report, fmt, output_path / f"matrix.{fmt}", title="forklab matrix")
        except ForkLabError as e:
            print(f"  ❌ {fmt}: {e}")
            continue
        print(f"  ✓ {path.name} ({path.stat().st_size / 1024:.1f} KB)")
        written += 1

    mismatches = report.mismatches(golden_matrix())
    if mismatches:
        print(f"\n⚠️  {len(mismatches)} cells differ from the golden matrix:")
        for m in mismatches:
            print(f"   {m['protocol']}/{m['variant']} {m['attack']}: expected {m['expected']}, got {m['got']}")
    else:
        print(f"\n✅ Matrix matches the golden matrix")
    print(f"   📁 Output directory: {output_path.absolute()}")
    print(f"   📄 Written: {written}/{len(FORMATS)} reports")

    return 0 if written == len(FORMATS) and not mismatches else 1


if __name__ == "__main__":
    raise SystemExit(main())
