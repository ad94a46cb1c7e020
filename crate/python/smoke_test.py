"""Smoke test for the bhcp_py extension: forward decay, observation size,
adaptive inversion quality and error reporting."""

import json
import math
import sys

import bhcp_py

CONFIG = {
    "grid": {"nodes": 17},
    "final_time": 0.1,
    "dt": 0.001,
    "initial_condition": {"kind": "product_of_sines"},
    "sensors": {"per_axis": 20, "placement": "interpolated", "weights": "unit"},
    "noise": {"sigma": 0.05},
    "seed": 1,
}


def main():
    text = json.dumps(CONFIG)

    fwd = bhcp_py.forward(text)
    peak = max(abs(v) for v in fwd["fields"][-1]["values"])
    assert abs(peak - math.exp(-0.8)) < 0.03 * math.exp(-0.8), peak

    obs = bhcp_py.observe(text)
    assert len(obs["values"]) == 400

    inv = bhcp_py.invert(text, "adaptive")
    assert inv["trace"]["converged"], inv["trace"]
    assert inv["relative_error"] <= 0.2, inv["relative_error"]

    fixed = bhcp_py.invert(json.dumps({**CONFIG, "lambda": {"mode": "fixed", "value": 1e6}}))
    assert fixed["f_norm"] < 1e-6

    step = bhcp_py.lambda_step(1.0, 0.1, 1.0, 100, 2)
    assert abs(step - 10 ** (-8 / 3)) < 1e-12

    try:
        bhcp_py.forward(json.dumps({"grid": {"nodes": 17}}))
    except ValueError as e:
        assert "final_time" in str(e)
    else:
        raise AssertionError("missing key accepted")

    print(f"ok: lambda {inv['lambda']:.4e}, relative error {inv['relative_error']:.3f}")
    return 0


if __name__ == "__main__":
    sys.exit(main())
