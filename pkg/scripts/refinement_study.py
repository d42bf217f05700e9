"""Band constant and bound constants under grid doubling, family refinement and box doubling.

Writes one CSV row per discretisation.  ``*_local`` columns restrict the
maximum to entries that do not depend on the box (bumps, atoms, steps):
lacunary entries are defined with frequencies tied to the half-width and
clipped logs are not localised, so box doubling changes those inputs.
"""

import argparse
import csv
import sys

from neumann_bmo.experiments import RunConfig, bound_constants, run_trace_forward

LOCAL_KINDS = ("bump", "atom", "step")
KEYS = ("C_prop33", "C_prop39", "C_prop32")

# (label, half_width, points_per_axis, refine); h is kept fixed when L doubles
CASES = (
    ("base", 4.0, 256, 1),
    ("grid x2", 4.0, 512, 1),
    ("family x2", 4.0, 256, 2),
    ("box x2", 8.0, 512, 1),
)


def study(seed: int, corpus: str):
    rows = []
    for label, L, N, refine in CASES:
        cfg = RunConfig("trace-forward", seed, half_width=L, points_per_axis=N, refine=refine, corpus=corpus)
        band = run_trace_forward(cfg).summary["band_C"]
        spec, balls = cfg.grid(), cfg.balls()
        entries = cfg.entries()
        consts = [bound_constants(e.field(spec), balls, (1.0,)) for e in entries]
        local = [c for e, c in zip(entries, consts) if e.kind in LOCAL_KINDS]
        rows.append({"case": label, "L": L, "N": N, "refine": refine, "band_C": band,
                     **{k: max(c[k] for c in consts) for k in KEYS},
                     **{f"{k}_local": max((c[k] for c in local), default=float("nan")) for k in KEYS}})
        print(", ".join(f"{k}={v:.4g}" if isinstance(v, float) else f"{k}={v}" for k, v in rows[-1].items()),
              flush=True)
    return rows


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--seed", type=int, default=20240611)
    parser.add_argument("--corpus", default="all")
    parser.add_argument("--out", default="refinement_study.csv")
    args = parser.parse_args()
    rows = study(args.seed, args.corpus)
    with open(args.out, "w", newline="") as fh:
        writer = csv.DictWriter(fh, fieldnames=list(rows[0]), lineterminator="\n")
        writer.writeheader()
        writer.writerows(rows)
    return 0


if __name__ == "__main__":
    sys.exit(main())
