#!/usr/bin/env python3
"""End-to-end demo on a synthetic planted-signal corpus.

Drives the CLI through all stages: synthesize a labeled corpus, normalize it,
train a WordPiece vocabulary, pretrain briefly on the MLM objective, fine-tune
a task head, evaluate on the held-out split, and classify a few raw verses.

Usage:
    python3 scripts/run_pipeline.py --workdir out/ --signal rhyme --n 800
"""

import argparse
import io
import sys
from contextlib import redirect_stdout
from pathlib import Path

from versebert import cli
from versebert.corpus import load_corpus, task_label


def run(argv):
    print("$ versebert " + " ".join(argv))
    code = cli.main(argv)
    if code != 0:
        sys.exit(f"step failed with exit code {code}")


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--workdir", default="pipeline_out")
    parser.add_argument("--signal", default="rhyme")
    parser.add_argument("--n", type=int, default=800)
    parser.add_argument("--seed", type=int, default=11)
    parser.add_argument("--pretrain-steps", type=int, default=100)
    parser.add_argument("--finetune-steps", type=int, default=300)
    args = parser.parse_args()

    work = Path(args.workdir)
    work.mkdir(parents=True, exist_ok=True)
    corpus_path = work / "corpus.tsv"
    lines_path = work / "lines.tsv"
    vocab_path = work / "vocab.txt"
    base_ckpt = work / "base.ckpt"
    task_ckpt = work / f"{args.signal}.ckpt"
    report_path = work / "report.json"

    run(["synth", "--n", str(args.n), "--seed", str(args.seed),
         "--signal", args.signal, "--out", str(corpus_path)])
    run(["preprocess", "--in", str(corpus_path), "--out", str(lines_path)])
    run(["train-tokenizer", "--in", str(lines_path), "--vocab-size", "512",
         "--out", str(vocab_path)])
    run(["pretrain", "--lines", str(lines_path), "--vocab", str(vocab_path),
         "--out", str(base_ckpt), "--preset", "tiny",
         "--max-steps", str(args.pretrain_steps), "--seed", str(args.seed)])
    run(["finetune", "--ckpt", str(base_ckpt), "--task", args.signal,
         "--corpus", str(corpus_path), "--vocab", str(vocab_path),
         "--out", str(task_ckpt), "--preset", "tiny", "--lr", "0.003",
         "--max-steps", str(args.finetune_steps), "--seed", str(args.seed)])
    run(["evaluate", "--ckpt", str(task_ckpt), "--corpus", str(corpus_path),
         "--task", args.signal, "--vocab", str(vocab_path),
         "--out", str(report_path)])

    print("\nclassifying three raw verses via `predict`:")
    store = load_corpus(corpus_path)
    sample = "\n".join(
        r.hemistich1 + "\t" + (r.hemistich2 or "") for r in store.records[:3]
    )
    stdin, sys.stdin = sys.stdin, io.StringIO(sample + "\n")
    buffer = io.StringIO()
    try:
        with redirect_stdout(buffer):
            code = cli.main(["predict", "--ckpt", str(task_ckpt), "--vocab", str(vocab_path)])
    finally:
        sys.stdin = stdin
    if code != 0:
        sys.exit(f"predict failed with exit code {code}")
    for record, line in zip(store.records[:3], buffer.getvalue().splitlines()):
        print(f"  predicted {line}    (planted: {task_label(record, args.signal)})")
    print(f"\nartifacts in {work}/ (reports, checkpoints, manifests)")


if __name__ == "__main__":
    main()
