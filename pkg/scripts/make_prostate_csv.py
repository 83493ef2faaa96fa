"""Export the Byar & Green prostate trial data to a raw CSV.

The source is the copy distributed with the SurvSet package (originally from
https://hbiostat.org/data/repo/Cprostate.html). Column names follow the
original file; cause of death is not preserved by SurvSet, so ``status`` is
reduced to ``alive`` / ``dead``.

    pip install --no-deps SurvSet
    python scripts/make_prostate_csv.py src/aftite/data/prostate.csv
"""

import sys

import pandas as pd
from SurvSet.data import SurvLoader

COLUMNS = ["patno", "stage", "rx", "dtime", "status", "age", "wt", "pf", "hx",
           "sbp", "dbp", "ekg", "hg", "sz", "sg", "ap", "bm"]


def main(out):
    df = SurvLoader().load_dataset("prostate")["df"]
    raw = pd.DataFrame({
        "patno": df["pid"] + 1,
        "stage": df["fac_stage"].astype(str),
        "rx": df["fac_rx"].astype(str),
        "dtime": df["time"],
        "status": df["event"].map({0: "alive", 1: "dead"}),
        "age": df["num_age"],
        "wt": df["num_wt"],
        "pf": df["fac_pf"].astype(str),
        "hx": df["fac_hx"].astype(str),
        "sbp": df["num_sbp"],
        "dbp": df["num_dbp"],
        "ekg": df["fac_ekg"].astype(str).str.strip(),
        "hg": df["num_hg"],
        "sz": df["num_sz"],
        "sg": df["num_sg"],
        "ap": df["num_ap"],
        "bm": df["fac_bm"].astype(str),
    })[COLUMNS]
    raw.to_csv(out, index=False)


if __name__ == "__main__":
    main(sys.argv[1])
