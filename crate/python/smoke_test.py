"""Smoke test for the Python bindings.

Build and install the extension first:

    pip install maturin
    maturin develop --release -m crates/py/Cargo.toml

then run `python3 python/smoke_test.py` from the repository root.
"""

import math
import pathlib
import tempfile

import cct_sets_py as cs

FIXTURES = pathlib.Path(__file__).resolve().parent.parent / "crates" / "core" / "tests" / "fixtures"


def main():
    sc = cs.Scenario.from_file(str(FIXTURES / "two_machine.toml"))
    assert sc.m == 2 and sc.names == ["A", "B"]

    cert = cs.certify(sc)
    assert cert["post"]["passed"]
    assert abs(cert["post"]["lhs"] - 0.5) < 1e-12

    eq = cs.equilibria(sc)
    assert abs((eq["post"][0] - eq["post"][1]) - math.asin(0.5)) < 1e-9

    sets = cs.assemble_sets(sc)
    adm, mrpi = sets[0]
    assert not adm.empty and adm.area > mrpi.area > 0
    z1 = eq["post"][0]
    assert adm.contains(z1, 0.0) and mrpi.contains(z1, 0.0)
    assert sets[1][1].empty

    with tempfile.TemporaryDirectory() as out:
        report = cs.analyze(sc, t_clear=3.0, out_dir=out)
        assert (pathlib.Path(out) / "report.toml").is_file()
    assert report.t_safe == 0.0 and math.isfinite(report.t_unsafe)
    assert report.classification == "unsafe"
    assert report.summary.startswith("t_safe=0.0000")

    sim = cs.simulate(sc, 0.2)
    assert sim["in_slab"]
    sim = cs.simulate(sc, 4.0)
    assert not sim["in_slab"]

    opt = cs.optimize_bounds(sc, 20, seed=1)
    again = cs.optimize_bounds(sc, 20, seed=1)
    assert opt["history_csv"] == again["history_csv"]
    assert all(b >= a for a, b in zip(opt["best_trace"], opt["best_trace"][1:]))

    try:
        sc.with_bounds([1.0, 0.0], [0.0, 1.0])
    except ValueError:
        pass
    else:
        raise AssertionError("reversed bounds accepted")

    print("smoke test passed:", report.summary)


if __name__ == "__main__":
    main()
