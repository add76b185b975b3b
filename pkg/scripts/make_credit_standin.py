"""Generate the synthetic credit-style table bundled with the package.

The columns mirror the ten features of the public credit-scoring data set
plus a binary delinquency label and an age-based group column.  Nothing in
it comes from real individuals.

    python scripts/make_credit_standin.py [--rows 1000] [--seed 0] [--out PATH]
"""
import argparse
import csv
from pathlib import Path

import numpy as np

COLUMNS = [
    "RevolvingUtilization", "age", "NumberOfTime30-59DaysPastDue", "DebtRatio",
    "MonthlyIncome", "NumberOfOpenCreditLines", "NumberOfTimes90DaysLate",
    "NumberRealEstateLoans", "NumberOfTime60-89DaysPastDue", "NumberOfDependents",
]
AGE_SPLIT = 35


def generate(rows: int, seed: int):
    rng = np.random.default_rng(seed)
    age = rng.integers(21, 80, size=rows)
    util = np.clip(rng.beta(2, 5, size=rows) + 0.3 * (age < AGE_SPLIT) * rng.random(rows), 0, 1.5)
    late30 = rng.poisson(0.3 + 0.4 * (age < AGE_SPLIT), size=rows)
    debt = rng.gamma(2.0, 0.2, size=rows)
    income = np.round(rng.lognormal(8.3 + 0.01 * (age - 21), 0.4, size=rows), 0)
    lines = rng.poisson(8, size=rows)
    late90 = rng.poisson(0.1 + 0.2 * (age < AGE_SPLIT), size=rows)
    estate = rng.poisson(1.0, size=rows)
    late60 = rng.poisson(0.15, size=rows)
    deps = rng.poisson(0.8, size=rows)
    z = (-1.2 + 2.0 * util + 0.6 * late30 + 0.9 * late90 + 0.5 * late60 + 0.4 * debt
         - 0.0002 * (income - 4000) - 0.02 * (age - 45) + 0.3 * rng.standard_normal(rows))
    label = (rng.random(rows) < 1.0 / (1.0 + np.exp(-z))).astype(int)
    group = np.where(age < AGE_SPLIT, "young", "old")
    feats = [util, age, late30, debt, income, lines, late90, estate, late60, deps]
    return feats, label, group


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--rows", type=int, default=1000)
    ap.add_argument("--seed", type=int, default=0)
    ap.add_argument("--out", default=str(Path(__file__).resolve().parents[1] / "src/fairps/scenarios/credit_standin.csv"))
    args = ap.parse_args(argv)
    feats, label, group = generate(args.rows, args.seed)
    with open(args.out, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(["SeriousDlqin2yrs"] + COLUMNS + ["age_group"])
        for i in range(args.rows):
            w.writerow([label[i]] + [f"{f[i]:.6g}" for f in feats] + [group[i]])
    print(f"wrote {args.rows} rows to {args.out}")


if __name__ == "__main__":
    main()
