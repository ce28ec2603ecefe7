"""Smoke test for the pymoescale extension module.

Build first:  pip install --no-build-isolation -e crates/py
"""

import math
import os
import tempfile

import pymoescale as m


def main():
    cfg = m.MoeConfig(n_layers=4, d_model=512, d_head=64, e_total=8, e_active=2)
    n_total, n_active = cfg.count_params()
    assert n_total > n_active > 0
    bd = cfg.flops_breakdown()
    assert abs(cfg.flops_per_token() - (bd["total"] - bd["router"])) < 1e-6 * bd["total"]
    assert cfg.estimator_ratio() > 1.0
    assert abs(cfg.sparsity - 0.75) < 1e-12

    law = m.LawCoeffs.published()
    assert law.form == "moe"
    assert law.predict(1e9, 2e10, 0.5) > 0

    runs = m.synth_law(law, [1e19, 1e20], [0.0, 0.5, 0.9], 8, 1e8, 3e10)
    assert len(runs) == 48
    cols = runs.columns()
    for n, d, s, y in zip(cols["n_total"], cols["tokens"], cols["sparsity"], cols["loss"]):
        assert abs(law.predict(n, d, s) - y) < 1e-12 * y

    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "runs.csv")
        runs.to_csv(path)
        again = m.RunTable.load(path)
        assert again.columns()["loss"] == cols["loss"]

    exp, closed = m.optimal_exponent(m.LawCoeffs.dense(400.0, 1800.0, 1.7, 0.34, 0.28), 0.0, [1e19, 1e20, 1e21])
    assert closed is not None and abs(exp - closed) < 1e-4

    slope, pref = m.power_law_fit([1.0, 10.0, 100.0], [2.0, 2.0 * 10**0.5, 20.0])
    assert abs(slope - 0.5) < 1e-12 and abs(pref - 2.0) < 1e-12

    assert m.huber_loss(0.0, 1e-3) == 0.0
    try:
        m.LawCoeffs.published().predict(1e9, 1e10, 1.0)
    except ValueError:
        pass
    else:
        raise AssertionError("sparsity 1 must raise")

    one = m.synth_law(law, [1e20], [0.0, 0.25, 0.5, 0.75, 0.9], 12, 1e8, 3e10)
    surf = m.fit_surface(one, degrees=(2, 2, 1))
    best = surf.optimal_size(0.5)
    assert best["size"] > 0 and math.isfinite(best["loss"])

    print("pymoescale", m.__version__, "smoke test OK")


if __name__ == "__main__":
    main()
