"""Parameter counts for the desk and full-scale configurations, per fusion mode.

    python3 scripts/param_count.py [--text-vocab 30000] [--phon-vocab 80]
"""

import argparse

from patcorrect import ModelConfig
from patcorrect.model import FUSIONS, count_parameters, param_shapes


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--text-vocab", type=int, default=30000)
    ap.add_argument("--phon-vocab", type=int, default=80)
    ap.add_argument("--breakdown", action="store_true", help="per-component totals for the full-scale model")
    args = ap.parse_args()

    for name, factory in (("desk", ModelConfig), ("full-scale", ModelConfig.full_scale)):
        for fusion in FUSIONS:
            n = count_parameters(factory(fusion=fusion), args.text_vocab, args.phon_vocab)
            print(f"{name:<11} {fusion:<12} {n:>12,d}")

    if args.breakdown:
        totals: dict[str, int] = {}
        for key, shape in param_shapes(ModelConfig.full_scale(), args.text_vocab, args.phon_vocab).items():
            size = 1
            for d in shape:
                size *= d
            group = key.split(".")[0]
            totals[group] = totals.get(group, 0) + size
        for group, n in sorted(totals.items(), key=lambda kv: -kv[1]):
            print(f"  {group:<8} {n:>12,d}")


if __name__ == "__main__":
    main()
