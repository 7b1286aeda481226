"""Generate the frozen expected-value file for the metric oracle tests.

Run from the repository root:

    python3 tests/data/make_metric_fixtures.py

Fixtures are seeded random 16x16 maps; expected values come from the
loop-based reference oracles in tests/oracles.py. The library
implementation is cross-checked here so a mismatch fails loudly at
generation time rather than silently freezing a bad value.
"""

from __future__ import annotations

import json
import sys
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parents[1]))

from oracles import (  # noqa: E402
    e_measure_oracle,
    mae_oracle,
    s_measure_oracle,
    weighted_f_oracle,
)

from wscod import metrics  # noqa: E402

SIZE = 16
N_FIXTURES = 20
SEED = 20240

def random_blob(rng: np.random.Generator) -> np.ndarray:
    """A random binary mask with both classes present."""
    while True:
        field = rng.normal(size=(SIZE, SIZE))
        # local smoothing keeps the mask blobby rather than salt/pepper
        smooth = field.copy()
        for _ in range(2):
            smooth = (
                smooth
                + np.roll(smooth, 1, 0) + np.roll(smooth, -1, 0)
                + np.roll(smooth, 1, 1) + np.roll(smooth, -1, 1)
            ) / 5.0
        mask = smooth > np.quantile(smooth, rng.uniform(0.6, 0.85))
        if 0 < mask.sum() < mask.size:
            return mask


def main() -> None:
    rng = np.random.default_rng(SEED)
    out = []
    for i in range(N_FIXTURES):
        gt = random_blob(rng)
        if i % 2 == 0:
            pred = random_blob(rng).astype(np.float64)
        else:
            pred = rng.uniform(0.0, 1.0, size=(SIZE, SIZE))
        expected = {
            "mae": mae_oracle(pred, gt),
            "s_measure": s_measure_oracle(pred, gt),
            "e_measure": e_measure_oracle(pred, gt),
            "weighted_f": weighted_f_oracle(pred, gt),
        }
        actual = {
            "mae": metrics.mae(pred, gt),
            "s_measure": metrics.s_measure(pred, gt),
            "e_measure": metrics.e_measure(pred, gt),
            "weighted_f": metrics.weighted_f_measure(pred, gt),
        }
        for key in expected:
            diff = abs(expected[key] - actual[key])
            if diff > 1e-6:
                raise SystemExit(
                    f"fixture {i}: {key} oracle {expected[key]:.9f} vs "
                    f"implementation {actual[key]:.9f} (diff {diff:.2e})"
                )
        out.append(
            {
                "pred": pred.round(8).tolist(),
                "gt": gt.astype(int).tolist(),
                "expected": {k: round(v, 12) for k, v in expected.items()},
            }
        )
    path = Path(__file__).with_name("metric_expected.json")
    path.write_text(json.dumps(out))
    print(f"wrote {len(out)} fixtures to {path}")


if __name__ == "__main__":
    main()
