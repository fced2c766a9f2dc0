"""Soft binary beliefs: how uncertain study outcomes move a Beta prior.

Ten studies each report "the outcome was 1 with probability p". A flat
report (p = 0.5) leaves the Beta(2, 2) prior unchanged, a certain one
(p = 0 or 1) gives the conjugate Beta posterior, and anything in between
interpolates. The second half shows the global posterior on a discrete
parameter set piling onto the best-fitting value as studies accumulate.

    python demos/soft_beliefs.py
"""

import numpy as np

from mba.experiments import concentration_experiment, example1_curves


def main():
    print("p    posterior mean   posterior sd")
    for p, (post, _) in example1_curves().items():
        mean = post.mean()[0]
        sd = np.sqrt(post.probs @ (post.support[:, 0] - mean) ** 2)
        print(f"{p:.1f}  {mean:14.4f}  {sd:13.4f}")

    rows, summary = concentration_experiment()
    print("\nmass on phi0 = 0.7 by number of studies (seed 0)")
    for r in rows:
        if r["seed"] == 0:
            print(f"  J = {r['J']:4d}   Q*(phi0) = {r['q_phi0']:.4f}")
    hits = sum(v["q_phi0_final"] > 0.99 for v in summary.values())
    print(f"seeds with Q*(phi0) > 0.99 at J = 500: {hits} of {len(summary)}")


if __name__ == "__main__":
    main()
