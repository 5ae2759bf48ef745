"""Regenerate the bundled five-region synthetic calibration CSVs."""
import argparse

from pandemic_econ.fixtures import write_toy_csvs


def main():
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument("--out", default="data/toy")
    parser.add_argument("--days", type=int, default=541)
    args = parser.parse_args()
    data = write_toy_csvs(args.out, horizon=args.days)
    print(f"wrote {args.days} days for {data.params.num_regions} regions to {args.out}")


if __name__ == "__main__":
    main()
