import numpy as np
import pytest


@pytest.fixture
def rng():
    return np.random.default_rng(12345)


CSV_HEADER = (
    "Date;Time;Global_active_power;Global_reactive_power;Voltage;"
    "Global_intensity;Sub_metering_1;Sub_metering_2;Sub_metering_3\n"
)

FIRST_ROW = "16/12/2006;17:24:00;4.216;0.418;234.840;18.400;0.000;1.000;17.000\n"


def tiny_power_csv(n=6, missing_at=()):
    """A handful of rows in the household-power layout, one minute apart."""
    lines = [CSV_HEADER, FIRST_ROW]
    for k in range(1, n):
        minute = 24 + k
        vals = [
            f"{4.216 + 0.1 * k:.3f}", f"{0.418:.3f}", f"{234.84 + k:.3f}",
            f"{18.4 + 0.43 * k:.3f}", "0.000", "1.000", f"{17.0 + k:.3f}",
        ]
        if k in missing_at:
            vals = ["?"] * 7
        lines.append(f"16/12/2006;17:{minute:02d}:00;" + ";".join(vals) + "\n")
    return "".join(lines)
