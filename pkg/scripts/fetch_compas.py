#!/usr/bin/env python
"""Download the ProPublica COMPAS two-year recidivism CSV into data/compas/
(requires network access).

Usage: python scripts/fetch_compas.py [dest_dir]
"""

import sys
import urllib.request
from pathlib import Path

URL = ("https://raw.githubusercontent.com/propublica/compas-analysis/"
       "master/compas-scores-two-years.csv")


def main():
    dest = Path(sys.argv[1]) if len(sys.argv) > 1 else Path("data/compas")
    dest.mkdir(parents=True, exist_ok=True)
    target = dest / "compas-scores-two-years.csv"
    if target.exists():
        print(f"{target} already present")
        return
    print(f"fetching {URL}")
    with urllib.request.urlopen(URL, timeout=60) as resp:
        target.write_bytes(resp.read())
    print(f"wrote {target}")


if __name__ == "__main__":
    main()
