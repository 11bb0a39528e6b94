#!/usr/bin/env python3
"""Speed study: the dilated-conv branch vs the LSTM encoder-decoder baseline.

Both models run at the same channel width and window (default 1024 channels,
21 snippets) on one pinned CPU. Reports analytic per-sample MAC counts and
wall-clock per eval-mode forward and per full optimizer step.
"""

import argparse
from pathlib import Path

from tcn_anticipation.baseline import LstmConfig, LstmEncoderDecoder
from tcn_anticipation.bench import bench_models
from tcn_anticipation.branch import Branch, BranchConfig
from tcn_anticipation.tensor import Rng


def main() -> int:
    ap = argparse.ArgumentParser(description=__doc__)
    ap.add_argument("--out", default="results/speed_study")
    ap.add_argument("--channels", type=int, default=1024)
    ap.add_argument("--snippets", type=int, default=21)
    ap.add_argument("--batch", type=int, default=4)
    ap.add_argument("--reps", type=int, default=30)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args()

    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    rng = Rng(args.seed)
    bcfg = BranchConfig(input_dim=args.channels, num_actions=100, num_verbs=20,
                        num_nouns=30, channels=args.channels, input_dropout=0.0,
                        block_dropout=0.0, head_dropout=0.0).for_snippets(args.snippets)
    branch = Branch(bcfg, rng)
    lcfg = LstmConfig(input_dim=args.channels, hidden=args.channels, num_actions=100,
                      encoder_steps=args.snippets, decoder_steps=8)
    baseline = LstmEncoderDecoder(lcfg, rng)

    report = bench_models(branch, baseline, args.batch, args.reps, seed=args.seed)
    (out / "speed_study.csv").write_text(report.csv(), encoding="utf-8")
    (out / "speed_study.txt").write_text(report.summary(), encoding="utf-8")
    print(report.summary(), end="")
    print(f"wrote {out / 'speed_study.csv'}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
