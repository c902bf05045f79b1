#!/usr/bin/env python3
"""Regenerate the bundled household-power excerpt (deterministic).

Synthetic but layout-faithful: ';' separators, dd/mm/yyyy dates, '?' for
missing cells, one-minute cadence starting 16/12/2006 17:24:00, intensity
exactly proportional to active power, and whole rows of missing
measurements at about a 1.25% rate. Row 0 matches the classic first row
of the original file.
"""

import os
import sys
from datetime import datetime, timedelta

import numpy as np

N_ROWS = 10_000
MISSING_TARGET = 0.0125
SLOPE = 18.400 / 4.216  # intensity per kW of active power


def main(path):
    rng = np.random.default_rng(20061216)
    t0 = datetime(2006, 12, 16, 17, 24, 0)
    minutes = np.arange(N_ROWS)
    hours = minutes / 60.0

    def ar1(phi, sigma, n):
        # minute-scale persistence, like the measured series
        eps = rng.standard_normal(n)
        out = np.empty(n)
        out[0] = eps[0] * sigma / np.sqrt(1 - phi**2)
        for k in range(1, n):
            out[k] = phi * out[k - 1] + sigma * eps[k]
        return out

    def blocks(n, p_on, lo, hi, mean_len):
        # appliance duty cycles: piecewise-constant on/off runs
        out = np.zeros(n)
        k = 0
        while k < n:
            length = int(rng.exponential(mean_len)) + 3
            level = float(rng.integers(lo, hi)) if rng.random() < p_on else 0.0
            out[k:k + length] = level
            k += length
        return out

    daily = np.sin(2 * np.pi * (hours % 24) / 24.0 - 1.2)
    gap = 2.4 + 1.5 * daily + ar1(0.97, 0.09, N_ROWS)
    gap = np.clip(gap, 0.076, 9.0)
    gap[0] = 4.216

    grp = np.clip(0.15 + 0.6 * np.abs(ar1(0.98, 0.012, N_ROWS)), 0.0, 1.0)
    grp[0] = 0.418
    voltage = 240.0 + 2.5 * np.sin(2 * np.pi * hours / 24.0) + ar1(0.95, 0.35, N_ROWS)
    voltage[0] = 234.840

    sm1 = blocks(N_ROWS, 0.25, 5, 40, 25.0)
    sm2 = blocks(N_ROWS, 0.35, 2, 30, 35.0)
    heat = (np.sin(2 * np.pi * (hours % 24) / 24.0 + 0.4) > 0.3).astype(float)
    sm3 = heat * np.clip(np.round(17 + ar1(0.9, 0.8, N_ROWS)), 0, 31)
    sm1[0], sm2[0], sm3[0] = 0.0, 1.0, 17.0

    gap = np.round(gap, 3)
    grp = np.round(grp, 3)
    voltage = np.round(voltage, 3)
    intensity = gap * SLOPE  # exact linear function of active power

    # whole-row missing runs, never touching the first or last row
    missing = np.zeros(N_ROWS, dtype=bool)
    target = int(round(MISSING_TARGET * N_ROWS))
    while missing.sum() < target:
        start = int(rng.integers(1, N_ROWS - 60))
        length = min(int(rng.integers(1, 45)), target - int(missing.sum()))
        missing[start:min(start + length, N_ROWS - 1)] = True

    with open(path, "w") as fh:
        fh.write(
            "Date;Time;Global_active_power;Global_reactive_power;Voltage;"
            "Global_intensity;Sub_metering_1;Sub_metering_2;Sub_metering_3\n"
        )
        for k in range(N_ROWS):
            stamp = t0 + timedelta(minutes=int(minutes[k]))
            date = f"{stamp.day:02d}/{stamp.month:02d}/{stamp.year:04d}"
            time = f"{stamp.hour:02d}:{stamp.minute:02d}:{stamp.second:02d}"
            if missing[k]:
                fh.write(f"{date};{time};?;?;?;?;?;?;?\n")
                continue
            fh.write(
                f"{date};{time};{gap[k]:.3f};{grp[k]:.3f};{voltage[k]:.3f};"
                f"{intensity[k]:.9f};{sm1[k]:.3f};{sm2[k]:.3f};{sm3[k]:.3f}\n"
            )
    print(f"wrote {N_ROWS} rows ({missing.mean():.4%} missing) to {path}")


if __name__ == "__main__":
    out = sys.argv[1] if len(sys.argv) > 1 else os.path.join(
        os.path.dirname(__file__), "..", "data", "household_power_excerpt.csv"
    )
    os.makedirs(os.path.dirname(out), exist_ok=True)
    main(out)
