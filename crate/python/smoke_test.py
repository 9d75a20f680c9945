"""Smoke test for the vpp_sched extension module.

Loads the built shared library directly, so it runs after a plain
`cargo build -p vpp-sched-python` without installing anything. Set
VPP_SCHED_LIB to point at a different build.
"""

import importlib.util
import json
import os
import shutil
import sys
import tempfile
from pathlib import Path

ROOT = Path(__file__).resolve().parent.parent
DATA = ROOT / "data"


def load_module():
    lib = os.environ.get("VPP_SCHED_LIB")
    candidates = [Path(lib)] if lib else [
        ROOT / "target" / profile / name
        for profile in ("release", "debug")
        for name in ("libvpp_sched.so", "libvpp_sched.dylib", "vpp_sched.dll")
    ]
    found = next((p for p in candidates if p.exists()), None)
    if found is None:
        sys.exit("build the extension first: cargo build -p vpp-sched-python")
    # The loader wants the file named after the module.
    staged = Path(tempfile.mkdtemp()) / ("vpp_sched.pyd" if found.suffix == ".dll" else "vpp_sched.so")
    shutil.copy(found, staged)
    spec = importlib.util.spec_from_file_location("vpp_sched", staged)
    module = importlib.util.module_from_spec(spec)
    spec.loader.exec_module(module)
    return module


def main():
    vs = load_module()

    v, loss, iterations = vs.power_flow(str(DATA / "feeder33.csv"))
    assert len(v) == 33 and iterations <= 10
    assert abs(loss - 202.7) < 1.0, loss
    assert abs(min(v) - 0.9131) < 1e-3, min(v)

    prices = [0.05, 0.02, 0.08, 0.01, 0.09]
    assert vs.ev_pricing_flags(prices, 0, 4, 2.0) == [False, True, False, True, False]
    assert vs.load_pricing_flags(prices, 0, 4) == [True, False, True, False, True]

    sc = vs.Scenario(str(DATA / "smoke.toml"))
    assert sc.bus_count == 6 and sc.station_count == 1 and len(sc.market_price) == 24

    base = sc.run(baseline_only=True)
    assert base.status == "baseline_only" and base.best_fitness is None
    assert base.summary()["grid_energy_mwh"][0] > 0.0

    result = sc.run(seed=7)
    assert result.status in ("feasible", "infeasible")
    assert result.seed == 7
    trace = result.trace()
    assert all(b <= a for a, b in zip(trace, trace[1:])), "best fitness never worsens"
    assert json.loads(result.to_json())["seed"] == 7
    with tempfile.TemporaryDirectory() as out:
        result.export(out, format="json")
        assert (Path(out) / "comparison.json").exists()

    try:
        vs.Scenario(str(DATA / "missing.toml"))
    except ValueError:
        pass
    else:
        raise AssertionError("missing scenario must raise")

    for name, (uncontrolled, controlled) in result.summary().items():
        print(f"{name:<20} {uncontrolled:>12.4f} {controlled:>12.4f}")
    print("python smoke test passed")


if __name__ == "__main__":
    main()
