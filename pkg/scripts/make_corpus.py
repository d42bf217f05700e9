"""Regenerate the shipped test-function corpus from its seed."""

import argparse

from neumann_bmo.corpus import CORPUS_PATH, generate_corpus, save_corpus


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=20240611)
    parser.add_argument("--out", default=str(CORPUS_PATH))
    args = parser.parse_args()
    entries = generate_corpus(args.seed)
    save_corpus(entries, args.out, seed=args.seed)
    print(f"wrote {len(entries)} entries to {args.out}")


if __name__ == "__main__":
    main()
