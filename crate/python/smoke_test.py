"""Smoke test for the morse_conley extension module.

Build and install first:
    cd crates/python && maturin build --release -o dist && pip install dist/*.whl
"""
import json
import math

import morse_conley as mc


def main():
    torus = mc.RiemannianSystem("torus2")
    assert torus.dim == 2
    assert abs(torus.value([0.0, 0.0]) - 1.5) < 1e-12
    assert max(abs(g) for g in torus.gradient([0.0, 0.0])) < 1e-12

    eng = mc.Engine("torus2", seed=1)
    crit = eng.critical_points()
    assert sorted(c.index for c in crit) == [0, 1, 1, 2], crit
    assert eng.rho > 0

    conns = eng.connections()
    assert len(conns) == 8, conns
    assert all(c.sign in (-1, 1) for c in conns)

    d2 = eng.boundary(2)
    d1 = eng.boundary(1)
    prod = [[sum(d1[i][k] * d2[k][j] for k in range(len(d2))) for j in range(len(d2[0]))] for i in range(len(d1))]
    assert all(v == 0 for row in prod for v in row)

    betti = [b for b, _ in eng.morse_homology()]
    assert betti == [1, 2, 1], betti

    saddle = next(c for c in crit if c.index == 1)
    h = eng.conley_homology(saddle.id, grid=64)
    assert [b for b, _ in h][:2] == [0, 1], h

    circle = mc.Engine("circle")
    assert [b for b, _ in circle.morse_homology()] == [1, 1]
    assert all(t > 0 and math.isfinite(t) for t in circle.filtration_times())

    ok, text = mc.run("homology", "sphere2")
    report = json.loads(text)
    assert ok and report["command"] == "homology"

    try:
        mc.Engine("klein")
    except mc.ConfigError:
        pass
    else:
        raise AssertionError("unknown system accepted")

    print("smoke test ok")


if __name__ == "__main__":
    main()
