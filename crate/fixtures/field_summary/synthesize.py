#!/usr/bin/env python3
"""Writes synthetic range-test CSVs whose summary statistics equal the
reference field results for each band and channel.

The raw field logs are not available, so these files are synthetic. They
exercise the analysis pipeline, not the radio model. Output is
deterministic; rerun to regenerate:

    python3 fixtures/field_summary/synthesize.py
"""

import csv
import random
from datetime import datetime, timedelta, timezone
from pathlib import Path

HERE = Path(__file__).resolve().parent
HEADER = ["time_iso8601", "node_id", "seq", "distance_m", "rssi_dbm", "snr_db", "hops"]
START = datetime(2024, 6, 1, 9, 0, tzinfo=timezone.utc)

# name, frequency label, channel, interval s, received, total,
# max distance m, mean SNR (hundredths of dB), mean RSSI (hundredths of dBm)
CONFIGS = [
    ("eu868-longfast", "868 MHz", "LongFast", 30, 92, 100, 1274, -368, -11395),
    ("eu868-shortfast", "868 MHz", "ShortFast", 15, 41, 70, 786, 299, -12145),
    ("eu433-longfast", "433 MHz", "LongFast", 30, 25, 61, 576, -190, -10442),
    ("eu433-shortfast", "433 MHz", "ShortFast", 15, 24, 47, 281, 92, -8427),
]


def values_with_mean(rng, n, mean_c, spread_c, slope_c):
    """n values in hundredths whose sum is exactly n * mean_c. Values fall
    off with index to mimic signal loss over distance."""
    vals = [
        mean_c + round(slope_c * (0.5 - i / max(n - 1, 1))) + rng.randint(-spread_c, spread_c)
        for i in range(n)
    ]
    vals[-1] += n * mean_c - sum(vals)
    return vals


def fmt(c):
    sign = "-" if c < 0 else ""
    c = abs(c)
    return f"{sign}{c // 100}.{c % 100:02d}"


def synthesize(name, interval, received, total, max_d, snr_c, rssi_c, seed):
    rng = random.Random(seed)
    # The highest sequence number must be received so it defines the total.
    missing = set(rng.sample(range(2, total), total - received))
    seqs = [s for s in range(1, total + 1) if s not in missing]
    snr = values_with_mean(rng, len(seqs), snr_c, 150, 400)
    rssi = values_with_mean(rng, len(seqs), rssi_c, 200, 600)
    rows = []
    for i, seq in enumerate(seqs):
        # Tenths of a metre, rising to exactly the maximum on the last record.
        d_tenths = max_d * 10 if seq == total else round(max_d * 10 * seq / total)
        t = START + timedelta(seconds=interval * (seq - 1) + 1)
        rows.append(
            [
                t.strftime("%Y-%m-%dT%H:%M:%S.000Z"),
                "3",
                str(seq),
                f"{d_tenths // 10}.{d_tenths % 10}",
                fmt(rssi[i]),
                fmt(snr[i]),
                "1",
            ]
        )
    with open(HERE / f"{name}.csv", "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(HEADER)
        w.writerows(rows)


def main():
    expected = ["name,frequency,channel,mean_snr_db,mean_rssi_dbm,max_distance_m,overall_pdr_percent"]
    for i, (name, freq, chan, interval, rx, tot, max_d, snr_c, rssi_c) in enumerate(CONFIGS):
        synthesize(name, interval, rx, tot, max_d, snr_c, rssi_c, seed=1000 + i)
        pdr = f"{100 * rx / tot:.2f}"
        expected.append(f"{name},{freq},{chan},{fmt(snr_c)},{fmt(rssi_c)},{max_d}.00,{pdr}")
    (HERE / "expected.csv").write_text("\n".join(expected) + "\n")


if __name__ == "__main__":
    main()
