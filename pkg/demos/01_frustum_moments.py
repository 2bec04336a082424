#!/usr/bin/env python3
"""Closed-form frustum moments versus brute-force Monte Carlo.

Each ray segment of a diverging scanline is treated as a conical frustum
and replaced by one anisotropic Gaussian.  This demo samples a frustum
uniformly by volume and compares the empirical mean distance and
variances against the closed-form expressions used by the renderer, then
shows how the integrated positional encoding damps high-frequency bands
as that footprint grows with depth.

Run:  python3 demos/01_frustum_moments.py
"""

import numpy as np

from echofield.encoding import encode
from echofield.frustum import (
    SegmentBounds,
    base_radii,
    mean_distance,
    perpendicular_variance,
    ray_variance,
)


def sample_frustum(mu, delta, r_lat, r_dep, n, rng):
    """Uniform-by-volume samples of the frustum centered at distance mu."""
    t0, t1 = mu - delta, mu + delta
    # distance density is proportional to t^2 (cross-section area grows as t^2)
    t = np.cbrt(t0**3 + rng.random(n) * (t1**3 - t0**3))
    # uniform point on the elliptical cross-section at distance t
    phi = rng.random(n) * 2 * np.pi
    rho = np.sqrt(rng.random(n))
    u = rho * np.cos(phi) * r_lat * t
    v = rho * np.sin(phi) * r_dep * t
    return t, u, v


def main():
    rng = np.random.default_rng(7)
    radii = base_radii(s_lat_mm=1.5, s_dep_mm=3.0)
    print("footprint slopes: r_lat = %.4f, r_dep = %.4f (mm per mm of range)"
          % (radii.r_lat, radii.r_dep))
    print()

    header = f"{'mu':>6} {'delta':>6} | {'quantity':>12} | {'closed form':>12} {'monte carlo':>12}"
    print(header)
    print("-" * len(header))
    n = 400_000
    for mu, delta in [(2.0, 1.0), (10.0, 0.5), (40.0, 2.0)]:
        seg = SegmentBounds(t0=mu - delta, t1=mu + delta)
        t, u, v = sample_frustum(mu, delta, radii.r_lat, radii.r_dep, n, rng)
        rows = [
            ("mean dist", mean_distance(seg), t.mean()),
            ("var along", ray_variance(seg), t.var()),
            ("var lateral", perpendicular_variance(seg, radii.r_lat), u.var()),
            ("var elevat.", perpendicular_variance(seg, radii.r_dep), v.var()),
        ]
        for name, closed, mc in rows:
            print(f"{mu:6.1f} {delta:6.2f} | {name:>12} | {closed:12.6f} {mc:12.6f}")
        print("-" * len(header))

    print()
    print("Integrated encoding: amplitude of band l at x = 0.3 rad as the")
    print("footprint variance grows (sin feature, damped by exp(-4^l v / 2)):")
    x = np.array([[0.3, 0.0, 0.0]])
    print(f"{'variance':>10} | " + " ".join(f"l={l:<3}" for l in range(6)))
    for var in [0.0, 1e-3, 1e-2, 1e-1]:
        feats = encode(x, np.full((1, 3), var), num_bands=6)
        sin_x = feats[0, 0::6][:6]  # the x-axis sine feature of each band
        print(f"{var:10.3f} | " + " ".join(f"{s:+.2f}" for s in sin_x))
    print()
    print("Coarse bands survive a wide footprint; fine bands fade to zero,")
    print("which is what keeps distant, wide samples from aliasing.")


if __name__ == "__main__":
    main()
