"""Print layer tables and parameter totals for every variant at a given input size."""

import argparse

from helmnet.model import VARIANTS, ModelConfig, build, format_summary, summarize

ap = argparse.ArgumentParser(description=__doc__)
ap.add_argument("--size", type=int, default=224)
ap.add_argument("--batchnorm", action="store_true")
args = ap.parse_args()

for name in VARIANTS:
    rows = summarize(build(ModelConfig(name, use_batchnorm=args.batchnorm, input_size=args.size)))
    print(f"== {name} ==\n{format_summary(rows)}\n")
