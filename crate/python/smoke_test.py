"""Smoke test for the pydeproj extension.

Build and run from the repository root:

    cargo build --release -p deproj-py
    cp target/release/libpydeproj.so python/pydeproj.so
    python3 python/smoke_test.py
"""

import math
import os
import sys
import tempfile

sys.path.insert(0, os.path.dirname(os.path.abspath(__file__)))

import pydeproj as dp


def check_projection():
    y = dp.Tensor([1, 4, 2, 2], [float(i) for i in range(16)])
    x = dp.project(y, dp.ProjectionSpec.averaging(1, 4))
    assert x.shape == [1, 2, 2]
    assert x.data == [6.0, 7.0, 8.0, 9.0]


def check_metrics():
    assert dp.kl_diag([1.0], [0.0], [0.0], [0.0]) == 0.5
    a = dp.Tensor.zeros([4])
    b = dp.Tensor([4], [0.1] * 4)
    assert abs(dp.psnr(a, b) - 20.0) < 1e-5
    assert dp.psnr(a, a) == dp.PSNR_CAP
    t = dp.parse_idx(bytes([0, 0, 8, 2, 0, 0, 0, 2, 0, 0, 0, 2, 0x00, 0x7F, 0xFF, 0x00]))
    assert t.shape == [2, 2] and t.data[2] == 1.0
    try:
        dp.parse_idx(bytes([1, 0, 8, 1, 0, 0, 0, 1, 0]))
    except ValueError as e:
        assert str(e).startswith("idx:")
    else:
        raise AssertionError("bad magic accepted")


def check_config():
    a = dp.Config("model.latent_dim=10\ntrain.lr=1e-3\n")
    b = dp.Config("train.lr=1e-3\n# comment\nmodel.latent_dim=10\n")
    assert a.hash() == b.hash()
    assert a.get("model.latent_dim") == "10"
    try:
        dp.Config("bogus.key=1")
    except ValueError as e:
        assert "line 1" in str(e)
    else:
        raise AssertionError("unknown key accepted")


def check_model():
    m = dp.Model([1, 4, 8, 8], 1, seed=3, latent_dim=2)
    assert m.variant == "cvae" and m.projection_shape == [1, 8, 8]
    x = dp.Tensor([1, 8, 8], [0.1 * (i % 7) for i in range(64)])
    mean, log_var = m.prior(x)
    assert len(mean) == len(log_var) == 2
    samples = m.sample(x, 3, seed=1)
    assert len(samples) == 3 and samples[0].shape == [1, 4, 8, 8]
    assert all(0.0 < v < 1.0 for v in samples[0].data)
    assert samples[0] == m.sample(x, 3, seed=1)[0]
    y = samples[1]
    total, recon, kl = m.loss(x, y, [0.0, 0.0], 0.0)
    assert math.isclose(total, recon) and kl >= 0.0
    with tempfile.TemporaryDirectory() as d:
        path = os.path.join(d, "m.dpjk")
        m.save(path)
        assert os.path.getsize(path) > 0
    det = dp.Model([1, 4, 8, 8], 1, variant="det")
    assert det.deproject(x) == det.deproject(x)


def check_lmmse():
    spec = dp.ProjectionSpec(0, [0.25, 0.75])
    ys = [dp.Tensor([2, 3], [((i * 7 + j * 3) % 11) / 10 for j in range(6)]) for i in range(40)]
    xs = [dp.project(y, spec) for y in ys]
    g = dp.LinearGaussianModel.fit(xs, ys, ridge=0.0)
    for s in g.sample(xs[0], 4, seed=2):
        p = dp.project(s, spec)
        assert max(abs(u - v) for u, v in zip(p.data, xs[0].data)) < 1e-5


if __name__ == "__main__":
    check_projection()
    check_metrics()
    check_config()
    check_model()
    check_lmmse()
    print("pydeproj smoke test passed")
