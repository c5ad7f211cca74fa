"""Full channel vs Caldeira-Leggett limit for a free particle: where the 1% target stands.

For a free particle and unbiased Gaussian mu both dynamics close on <p^2>:

    full channel:      d<p^2>/dt = -Gamma alpha (2 - alpha) <p^2> + Gamma alpha^2 sigma^2
    diffusion limit:   d<p^2>/dt = -2 Gamma alpha <p^2>          + Gamma alpha^2 sigma^2

so their relative difference over one relaxation time follows in closed form.
The script tabulates it over the initial <p^2> and alpha, and with --grid also
runs both grid solvers at alpha = 0.05, sigma / Delta p = 10 (about two minutes).

Usage: python scripts/criterion6_analysis.py [--grid]
"""

import argparse

import numpy as np

from frictionchan.core import HamiltonianSpec, gaussian_state, make_grid
from frictionchan.channel import ChannelSpec
from frictionchan.diffusion import compare_full_vs_diffusion
from frictionchan.distributions import FeedbackLaw, gaussian_mu


def pp_gap(alpha, sigma, p0, gamma=1.0, n_t=401):
    """max over t in [0, tau] of |pp_CL - pp_full| / pp_full."""
    le, lc = gamma * alpha * (2 - alpha), 2 * gamma * alpha
    pe, pc = alpha * sigma**2 / (2 - alpha), alpha * sigma**2 / 2
    t = np.linspace(0, 1 / le, n_t)
    full = pe + (p0 - pe) * np.exp(-le * t)
    cl = pc + (p0 - pc) * np.exp(-lc * t)
    return float(np.max(np.abs(cl - full) / full))


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--grid", action="store_true", help="also run the grid comparison")
    args = ap.parse_args()
    sigma = 2.0
    print("closed-form max relative <p^2> gap over one relaxation time")
    print("alpha   p0=1e-4   p0=0.04 (width 2.5)   p0=1      p0=100")
    for alpha in (0.2, 0.1, 0.05, 0.02, 0.01):
        gaps = [pp_gap(alpha, sigma, p0) for p0 in (1e-4, 0.04, 1.0, 100.0)]
        print(f"{alpha:<6} " + "  ".join(f"{g:8.4%}" for g in gaps))
    p0s = np.logspace(-6, 4, 801)
    best = min(pp_gap(0.05, sigma, p) for p in p0s)
    print(f"alpha = 0.05: smallest gap over initial <p^2> in [1e-6, 1e4] is {best:.4%}")
    if args.grid:
        g = make_grid(256, 8.0)
        spec = ChannelSpec(gaussian_mu(sigma), FeedbackLaw.linear(0.05), 1.0)
        tau = 1 / (0.05 * 1.95)
        c = compare_full_vs_diffusion(HamiltonianSpec.free(), spec, gaussian_state(g, 0, 0, 2.5), tau, 0.1,
                                      sample_every=1000)
        print(f"grid solvers: max rel error {c.max_rel_error:.6%}, closed form {pp_gap(0.05, sigma, 0.04):.6%}")


if __name__ == "__main__":
    main()
