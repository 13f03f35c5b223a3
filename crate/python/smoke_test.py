"""Smoke test for the pylegsmooth extension module.

Build and install it first:

    pip install maturin
    maturin build --release -m crates/python/Cargo.toml
    pip install target/wheels/pylegsmooth-*.whl
"""

import math
import os
import tempfile

import pylegsmooth as ls


def close(a, b, tol):
    return all(abs(x - y) < tol for x, y in zip(a, b))


def main():
    phi = [0.3, -0.2, 1.1]
    assert close(ls.log(ls.exp(phi)), phi, 1e-12)

    leg = ls.KinematicChain.six_dof_leg(0.1)
    angles = [0.1, -0.05, -0.4, 0.8, -0.4, 0.05]
    r, p = leg.forward(angles)
    back = leg.inverse(r, p, [0.0, 0.0, -0.3, 0.6, -0.3, 0.0])
    assert close(leg.forward(back)[1], p, 1e-9)
    cov = leg.covariance(angles, [0.00873] * 6)
    assert len(cov) == 6 and all(cov[k][k] >= 0.0 for k in range(6))

    samples = [(k * 0.005, [0.0, 0.0, 9.81], [0.0, 0.0, 0.2]) for k in range(201)]
    delta = ls.preintegrate_imu(samples, 0.0, 1.0)
    assert abs(ls.log(delta.delta_r)[2] - 0.2) < 1e-9
    assert abs(delta.dt - 1.0) < 1e-12

    contact = ls.rigid_contact_covariance(0.0, 0.5, 0.05, 0.1)
    assert abs(contact[3][3] - 0.1**2 * 0.5) < 1e-12

    cfg = ls.Config()
    cfg.duration = 10.0
    data = ls.simulate(cfg, seed=2)
    with tempfile.TemporaryDirectory() as tmp:
        path = os.path.join(tmp, "walk.txt")
        data.write(path)
        data = ls.Dataset.read(path)

    results = {preset: ls.run(data, preset, cfg) for preset in ("imu", "all")}
    for preset, res in results.items():
        assert res.converged, preset
        assert len(res.trajectory) == len(data.truth)
        print(f"{preset:>4}: {res}")
    assert results["all"].median_translation < results["imu"].median_translation

    exact = ls.run(ls.simulate(cfg, noiseless=True), "all", cfg)
    assert exact.median_translation < 1e-9 and math.isfinite(exact.final_cost)

    try:
        ls.run(data, "bogus")
    except ValueError as e:
        print("rejected bad preset:", e)
    else:
        raise AssertionError("bad preset accepted")

    print("smoke test passed")


if __name__ == "__main__":
    main()
