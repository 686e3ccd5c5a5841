"""Regenerate the ingestion fixture CSVs in this directory (run from any working directory)."""

from pathlib import Path

import pandas as pd

HERE = Path(__file__).resolve().parent


def hours(site, start, n, value):
    t0 = pd.Timestamp(start)
    return [(site, (t0 + pd.Timedelta(hours=h)).strftime("%Y-%m-%d %H:%M"), value) for h in range(n)]


def month_days(site, year, month, days, value):
    out = []
    for d in days:
        out += hours(site, f"{year}-{month:02d}-{d:02d} 09:00", 24, value)
    return out


def hourly():
    rows = []
    # BND: the 09:00 day boundary
    rows += month_days("BND", 2001, 6, range(1, 31), "0.2")
    rows += [("BND", "2001-05-31 08:59", "30.0"),  # belongs to the 30 May day
             ("BND", "2001-07-01 08:59", "12.5"),  # belongs to the 30 June day
             ("BND", "2001-07-01 09:00", "3.3")]   # first hour of the 1 July day
    # COV: 24/30 days kept, 24/31 dropped, 25/31 kept
    rows += month_days("COV", 2001, 6, range(1, 25), "4.0")
    rows += month_days("COV", 2001, 7, range(1, 25), "5.0")
    rows += month_days("COV", 2001, 8, range(1, 26), "6.0")
    rows += [("COV", "2001-13-45 10:00", "1.0")]
    # FAR: complete month with a single spike
    far = month_days("FAR", 2001, 6, range(1, 31), "0.3")
    far[200] = (far[200][0], far[200][1], "42.0")
    rows += far + [("FAR", "2001-06-03 12:30", "abc")]
    # M15: 15% of hours missing (sentinel), kept by screening
    m15 = month_days("M15", 2001, 6, range(1, 31), "1.1")
    m15 = [(s, t, "-999") if i < 108 else (s, t, v) for i, (s, t, v) in enumerate(m15)]
    rows += m15
    # MIS: 25% of hours missing, excluded by screening
    mis = month_days("MIS", 2001, 6, range(1, 31), "0.9")
    mis = [(s, t, "") if i < 180 else (s, t, v) for i, (s, t, v) in enumerate(mis)]
    rows += mis
    # TW1 (three months) and TW2 (one month), about 3 km apart
    rows += month_days("TW1", 2001, 6, range(1, 31), "2.0")
    rows += month_days("TW1", 2001, 7, range(1, 32), "2.5")
    rows += month_days("TW1", 2001, 8, range(1, 32), "3.0")
    rows += month_days("TW2", 2001, 6, range(1, 31), "7.0")
    return pd.DataFrame(rows, columns=["site_id", "timestamp", "precip_mm"])


def stations():
    return pd.DataFrame({
        "site_id": ["BND", "COV", "FAR", "M15", "MIS", "TW1", "TW2"],
        "lon": [11.2, 11.6, 12.9, 12.0, 12.4, 11.4, 11.4],
        "lat": [45.2, 45.2, 46.3, 45.6, 45.9, 45.8, 45.827],
        "alt_m": [5, 12, 1400, 150, 600, 300, 320],
    })


def stations_65():
    rows, k = [], 0
    for i in range(7):
        for j in range(7):
            k += 1
            rows.append((f"G{k:02d}", round(11.0 + 0.25 * j, 4), round(45.0 + 0.2 * i, 4), 30.0, 0.05))
    for t in range(12):
        base = rows[t * 4]
        rows.append((f"T{t + 1:02d}", round(base[1] + 0.028, 4), base[2], 10.0, 0.05))
    for x in range(4):
        rows.append((f"X{x + 1}", 13.5, round(45.0 + 0.3 * x, 4), 25.0, 0.25))
    return pd.DataFrame(rows, columns=["site_id", "longitude", "latitude", "record_years", "missing_fraction"])


if __name__ == "__main__":
    hourly().to_csv(HERE / "hourly.csv", index=False, lineterminator="\n")
    stations().to_csv(HERE / "stations.csv", index=False, lineterminator="\n")
    stations_65().to_csv(HERE / "stations_65.csv", index=False, lineterminator="\n")
