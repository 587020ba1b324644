#!/usr/bin/env python3
"""Download the three benchmark datasets into data/.

Network access is required. Each dataset lands as a headered CSV that the
bundled schemas read directly:

  data/compas-scores-two-years.csv        (two-year recidivism scores)
  data/german_credit.csv                  (Statlog German credit, headered)
  data/folktables_acspubliccoverage.csv   (ACS public-coverage task; needs
                                           the `folktables` package)
"""

import argparse
import sys
import urllib.request
from pathlib import Path

COMPAS_URL = (
    "https://raw.githubusercontent.com/propublica/compas-analysis/"
    "master/compas-scores-two-years.csv"
)
GERMAN_URL = (
    "https://archive.ics.uci.edu/ml/machine-learning-databases/"
    "statlog/german/german.data"
)

GERMAN_COLUMNS = [
    "checking_status",
    "duration",
    "credit_history",
    "purpose",
    "credit_amount",
    "savings_status",
    "employment",
    "installment_commitment",
    "personal_status",
    "other_parties",
    "residence_since",
    "property_magnitude",
    "age",
    "other_payment_plans",
    "housing",
    "existing_credits",
    "job",
    "num_dependents",
    "own_telephone",
    "foreign_worker",
    "class",
]


def fetch_compas(dest: Path) -> None:
    out = dest / "compas-scores-two-years.csv"
    if out.exists():
        print(f"skip {out} (already present)")
        return
    print(f"downloading {COMPAS_URL}")
    with urllib.request.urlopen(COMPAS_URL) as response:
        out.write_bytes(response.read())
    print(f"wrote {out}")


def fetch_german(dest: Path) -> None:
    out = dest / "german_credit.csv"
    if out.exists():
        print(f"skip {out} (already present)")
        return
    print(f"downloading {GERMAN_URL}")
    with urllib.request.urlopen(GERMAN_URL) as response:
        raw = response.read().decode("utf-8")
    lines = [line.split() for line in raw.strip().splitlines()]
    bad = [i for i, parts in enumerate(lines) if len(parts) != len(GERMAN_COLUMNS)]
    if bad:
        raise SystemExit(f"unexpected field count on line(s) {bad[:5]}")
    with out.open("w", encoding="utf-8") as handle:
        handle.write(",".join(GERMAN_COLUMNS) + "\n")
        for parts in lines:
            handle.write(",".join(parts) + "\n")
    print(f"wrote {out} ({len(lines)} rows)")


def fetch_folktables(dest: Path) -> None:
    out = dest / "folktables_acspubliccoverage.csv"
    if out.exists():
        print(f"skip {out} (already present)")
        return
    try:
        from folktables import ACSDataSource, ACSPublicCoverage
    except ImportError:
        raise SystemExit(
            "the folktables package is required for this dataset: "
            "pip install folktables"
        )
    source = ACSDataSource(survey_year="2018", horizon="1-Year", survey="person")
    print("downloading ACS PUMS 2018 1-Year (all states; this is large)")
    data = source.get_data(download=True)
    features, labels, _ = ACSPublicCoverage.df_to_pandas(data)
    frame = features.copy()
    frame["PUBCOV"] = labels[labels.columns[0]].astype(int)
    frame.to_csv(out, index=False, float_format="%g")
    print(f"wrote {out} ({len(frame)} rows)")


def main() -> None:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--dest", default="data", help="output directory")
    parser.add_argument(
        "--only",
        choices=["compas", "german", "folktables"],
        help="fetch a single dataset",
    )
    args = parser.parse_args()
    dest = Path(args.dest)
    dest.mkdir(parents=True, exist_ok=True)
    jobs = {
        "compas": fetch_compas,
        "german": fetch_german,
        "folktables": fetch_folktables,
    }
    selected = [args.only] if args.only else list(jobs)
    failures = []
    for name in selected:
        try:
            jobs[name](dest)
        except SystemExit as exc:
            failures.append((name, str(exc)))
            print(f"{name}: {exc}", file=sys.stderr)
        except Exception as exc:
            failures.append((name, str(exc)))
            print(f"{name}: download failed: {exc}", file=sys.stderr)
    if failures:
        sys.exit(1)


if __name__ == "__main__":
    main()
