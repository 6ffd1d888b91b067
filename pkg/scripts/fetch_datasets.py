"""Download the public ETT benchmark CSVs into data/.

Needs outbound network access. On an air-gapped machine, copy the
files from https://github.com/zhouhaoyi/ETDataset (ETT-small/) into
data/ by hand; the rest of the tooling only cares that the CSVs exist.
"""

import argparse
import pathlib
import urllib.request

BASE = "https://raw.githubusercontent.com/zhouhaoyi/ETDataset/main/ETT-small"
FILES = ("ETTh1.csv", "ETTh2.csv", "ETTm1.csv", "ETTm2.csv")


def main() -> int:
    parser = argparse.ArgumentParser(description=__doc__)
    parser.add_argument(
        "--out", default="data", help="target directory (default: data)"
    )
    parser.add_argument(
        "--all", action="store_true",
        help="fetch every ETT-small file, not just ETTh1",
    )
    args = parser.parse_args()

    out = pathlib.Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    wanted = FILES if args.all else FILES[:1]
    for name in wanted:
        target = out / name
        if target.exists():
            print(f"{target} already present, skipping")
            continue
        url = f"{BASE}/{name}"
        print(f"fetching {url}")
        with urllib.request.urlopen(url, timeout=60) as resp:
            target.write_bytes(resp.read())
        rows = sum(1 for _ in target.open()) - 1
        print(f"wrote {target} ({rows} rows)")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
