"""Smoke test for the Python bindings.

Build and install first, e.g. from crates/python:
    maturin build --release && pip install ../../target/wheels/deblur_sdi-*.whl
"""

import math
import sys

import deblur_sdi_py as ds


def main() -> int:
    sharp, kernel = ds.benchmark_instance(32)
    assert sharp.shape == (1, 32, 32)
    assert kernel.size == 9
    assert abs(sum(map(sum, kernel.to_list())) - 1.0) < 1e-12

    direct = ds.convolve(sharp, kernel)
    fft = ds.convolve(sharp, kernel, method="fft")
    diff = max(
        abs(a - b)
        for ra, rb in zip(direct.to_list()[0], fft.to_list()[0])
        for a, b in zip(ra, rb)
    )
    assert diff < 1e-12, diff

    blurred = ds.synthesize(sharp, kernel, noise_std=0.01, seed=7)
    assert ds.psnr(sharp, sharp) == math.inf
    assert abs(ds.ssim(sharp, sharp) - 1.0) < 1e-12
    assert abs(ds.kernel_similarity(kernel, kernel) - 1.0) < 1e-9

    sched = ds.Schedule()
    assert len(sched) == 30
    assert sched.beta[0] == 0.02 and sched.beta[-1] == 1e-4

    cfg = ds.Config(outer_steps=3, inner_iters=2, kernel_size=9, base_channels=8, hidden_dim=32, num_hidden=1, seed=1)
    assert cfg["outer_steps"] == 3 and cfg["generator_mode"] == "diffusion"
    assert ds.Config.from_toml(cfg.to_toml())["seed"] == 1
    for bad in ({"kernel_size": 10}, {"no_such_field": 1}):
        try:
            ds.Config(**bad)
        except ValueError:
            pass
        else:
            raise AssertionError(f"accepted {bad}")

    image, est, trace = ds.deblur(blurred, cfg, sharp=sharp, true_kernel=kernel)
    assert image.shape == sharp.shape and est.size == 9
    assert [r["step"] for r in trace] == [3, 2, 1]
    assert all(r["psnr"] is not None for r in trace)
    again, _, _ = ds.deblur(blurred, cfg)
    assert again.to_list() == image.to_list(), "runs are not deterministic"
    print(f"ok: blurred {ds.psnr(sharp, blurred):.2f} dB, after 3 steps {trace[-1]['psnr']:.2f} dB")
    return 0


if __name__ == "__main__":
    sys.exit(main())
