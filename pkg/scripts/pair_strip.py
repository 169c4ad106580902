"""Where does the aleatoric mass sit? Ranks off-diagonal entries of a bundle's mean aleatoric matrix.

    python scripts/pair_strip.py runs/domain_shift/train_right/eval_right
"""

import sys
from pathlib import Path

import numpy as np

from uqpen.uncertainty import read_matrix_csv


def main(bundle: str, top: int = 6) -> None:
    names, alea = read_matrix_csv(Path(bundle) / "aleatoric.csv")
    k = len(names)
    mask = np.triu(np.ones((k, k), dtype=bool), 1)
    vals = np.abs(alea[mask])
    i, j = np.nonzero(mask)
    p90 = np.percentile(np.abs(alea[~np.eye(k, dtype=bool)]), 90)
    print(f"90th percentile of |off-diagonal|: {p90:.5f}")
    for idx in np.argsort(-vals)[:top]:
        print(f"  {names[i[idx]]}-{names[j[idx]]}  {alea[i[idx], j[idx]]: .5f}")


if __name__ == "__main__":
    main(*sys.argv[1:2])
