"""Smoke test for the pgrasp extension module.

Build first with `cargo build -p pgrasp-py --release`, then run
`python3 python/smoke_test.py`. The module is loaded straight from the
cargo target directory; set PGRASP_LIB to point at a different build.
"""

import importlib.machinery
import importlib.util
import math
import os
import pathlib
import sys
import tempfile

ROOT = pathlib.Path(__file__).resolve().parent.parent


def load_module():
    candidates = [os.environ.get("PGRASP_LIB")] + [
        str(ROOT / "target" / profile / "libpgrasp.so") for profile in ("release", "debug")
    ]
    for path in filter(None, candidates):
        if os.path.exists(path):
            loader = importlib.machinery.ExtensionFileLoader("pgrasp", path)
            spec = importlib.util.spec_from_file_location("pgrasp", path, loader=loader)
            module = importlib.util.module_from_spec(spec)
            loader.exec_module(module)
            return module
    sys.exit("libpgrasp.so not found; run `cargo build -p pgrasp-py --release` first")


def main():
    pg = load_module()

    parts = pg.Part.corpus(7, 5)
    assert len(parts) == 5
    assert {p.family for p in parts} == {"ngon", "gear", "lbracket", "slotted_bar", "ellipse"}
    part = pg.Part.generate(3, "ngon")
    min_x, min_y, max_x, max_y = part.bounding_box((0.0, 0.0, 0.0))
    assert min_x < 0.0 < max_x and min_y < 0.0 < max_y
    assert part.contains((0.0, 0.0, 0.0), 0.0, 0.0)

    out = pg.simulate_pinch(part, (0.0, 0.0, 0.3), (0.0, 0.0, part.height / 2, 0.0))
    assert set(out) >= {"success", "object_displacement", "grasp_displacement", "failure"}
    print("pinch:", out["success"], out["failure"], [round(v, 5) for v in out["object_displacement"]])

    dg = pg.displacement_to_grasp_frame((0.01, 0.0, 0.2), (0.0, 0.0, 0.0, 0.0), (0.0, 0.0, 0.01, 0.0))
    assert all(abs(v) < 1e-15 for v in dg)
    target = (0.1, -0.2, 0.5)
    cmd = pg.correct_placement(target, (0.0, 0.0), (0.0, 0.0, 0.0, 0.0))
    assert all(math.isclose(a, b, abs_tol=1e-12) for a, b in zip(cmd, target))
    assert pg.pool_size(3200, 0.03) == 96

    data = pg.Dataset.collect(parts[:2], 8, seed=11, workers=1)
    assert len(data) == 16
    again = pg.Dataset.collect(parts[:2], 8, seed=11, workers=2)
    assert data.to_bytes() == again.to_bytes(), "collection depends on worker count"
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "smoke.pgds")
        data.write(path)
        assert pg.Dataset.read(path).to_bytes() == data.to_bytes()
        gqn = pg.Gqn(5)
        gqn.save(os.path.join(tmp, "gqn.pgwt"))
        gqn = pg.Gqn.load(os.path.join(tmp, "gqn.pgwt"))
    rec = data.record(0)
    print("record 0:", rec["part_id"], rec["success"])

    memory = pg.Lowess()
    memory.insert(1, (0.01, 0.0, 0.02, 0.2), (0.004, -0.002, -0.001, 0.3))
    memory.insert(1, (-0.01, 0.0, 0.02, -0.2), (0.001, 0.006, -0.003, -0.1))
    mean, _ = memory.predict_key(1, (0.0, 0.0, 0.02, 0.0))
    assert math.isclose(mean[0], 0.0025, rel_tol=1e-12)
    try:
        memory.predict_key(2, (0.0, 0.0, 0.0, 0.0))
        raise AssertionError("unknown part accepted")
    except KeyError:
        pass

    gdn = pg.Gdn("GCIP-M+V", 6)
    assert gdn.variant == "GCIP-M+V"
    quality = pg.plan_quality_only(part, (0.0, 0.0, 0.3), gqn, n=64, seed=1)
    precise = pg.plan_precise(part, (0.0, 0.0, 0.3), gqn, gdn, n=64, top_fraction=0.1, seed=1)
    assert precise["pool_size"] == 7 and precise["variance"] is not None
    print("plans:", quality["candidate_index"], precise["candidate_index"])
    print("smoke test passed")


if __name__ == "__main__":
    main()
