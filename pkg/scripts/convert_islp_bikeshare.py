"""Rebuild tests/data/bikeshare_2011_hour.csv from the ISLP package's Bikeshare table.

ISLP ships the 2011 half (8,645 hourly records) of the UCI Bike Sharing data
with recoded month/weather labels. This script maps it back to the column
layout of the UCI ``hour.csv`` file.

    python scripts/convert_islp_bikeshare.py path/to/Bikeshare.csv tests/data/bikeshare_2011_hour.csv
"""

import csv
import datetime as dt
import sys

MONTHS = ["Jan", "Feb", "March", "April", "May", "June", "July", "Aug", "Sept", "Oct", "Nov", "Dec"]
WEATHER = {"clear": 1, "cloudy/misty": 2, "light rain/snow": 3, "heavy rain/snow": 4}
HEADER = ["instant", "dteday", "season", "yr", "mnth", "hr", "holiday", "weekday", "workingday",
          "weathersit", "temp", "atemp", "hum", "windspeed", "casual", "registered", "cnt"]


def main(src, dst):
    start = dt.date(2011, 1, 1)
    with open(src, newline="") as fin, open(dst, "w", newline="") as fout:
        w = csv.writer(fout, lineterminator="\n")
        w.writerow(HEADER)
        for i, r in enumerate(csv.DictReader(fin), start=1):
            day = start + dt.timedelta(days=int(r["day"]) - 1)
            w.writerow([i, day.isoformat(), r["season"], 0, MONTHS.index(r["mnth"]) + 1, r["hr"],
                        r["holiday"], r["weekday"], r["workingday"], WEATHER[r["weathersit"]],
                        r["temp"], r["atemp"], r["hum"], r["windspeed"], r["casual"],
                        r["registered"], r["bikers"]])


if __name__ == "__main__":
    main(*sys.argv[1:3])
