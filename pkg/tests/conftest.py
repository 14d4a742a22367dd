import csv

import numpy as np
import pytest

HILLSTROM_HEADER = ["recency", "history_segment", "history", "mens", "womens", "zip_code",
                    "newbie", "channel", "segment", "visit", "conversion", "spend"]
SEGMENTS = ["Mens E-Mail", "Womens E-Mail", "No E-Mail"]
HISTORY_SEGMENTS = ["1) $0 - $100", "2) $100 - $200", "3) $200 - $350", "4) $350 - $500"]
ZIPS = ["Rural", "Surburban", "Urban"]
CHANNELS = ["Multichannel", "Phone", "Web"]


def hillstrom_rows(n: int, seed: int = 0) -> list[list]:
    """Rows in the public Hillstrom schema with a visit effect that depends on recency."""
    rng = np.random.default_rng(seed)
    rows = []
    for _ in range(n):
        recency = int(rng.integers(1, 13))
        history = float(np.round(rng.gamma(2.0, 120.0), 2))
        seg = SEGMENTS[int(rng.integers(0, 3))]
        base = 0.08 + 0.01 * (12 - recency) / 12
        lift = 0.12 if (seg == "Mens E-Mail" and recency <= 6) else (-0.02 if seg == "Mens E-Mail" else 0.0)
        visit = int(rng.uniform() < base + lift)
        rows.append([recency, HISTORY_SEGMENTS[min(int(history // 150), 3)], history,
                     int(rng.integers(0, 2)), int(rng.integers(0, 2)), ZIPS[int(rng.integers(0, 3))],
                     int(rng.integers(0, 2)), CHANNELS[int(rng.integers(0, 3))], seg, visit, 0, 0.0])
    return rows


def write_hillstrom(path, rows, header=HILLSTROM_HEADER):
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(header)
        w.writerows(rows)
    return path


@pytest.fixture
def hillstrom_csv(tmp_path):
    return write_hillstrom(tmp_path / "hillstrom.csv", hillstrom_rows(600, seed=1))
