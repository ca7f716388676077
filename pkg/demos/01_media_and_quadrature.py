"""Walk through the discretization building blocks.

Shows the oscillatory scattering coefficient, its period-averaged
(homogenized) counterpart, the midpoint ordinate rule, and the overlapping
subdomain layout.  Writes a figure to demos/out/ when matplotlib is
available, otherwise prints a text summary.
"""

import os

import numpy as np

from rteschwarz import (
    build_decomposition,
    build_grid,
    build_quadrature,
    eval_sigma,
    homogenized_sigma,
)

OUT = os.path.join(os.path.dirname(__file__), "out")
os.makedirs(OUT, exist_ok=True)

grid = build_grid(360)
quad = build_quadrature(40)
delta = 1 / 81

print("ordinates: %d midpoints in (-1,1), weight sum = %.15f"
      % (quad.n, quad.weights.sum()))
print("first/last ordinate: %.4f / %.4f" % (quad.nodes[0], quad.nodes[-1]))

x = np.linspace(0.0, 1.0, 4001)
sig = eval_sigma(x, delta)
print("sigma^delta over [0,1]: min %.4f, max %.3f (delta = 1/81)" % (sig.min(), sig.max()))
print("homogenized sigma at x=0: %.5f (= 2.1/sqrt(0.21))" % homogenized_sigma(0.0))

geom = build_decomposition(grid, 10, 0.5)
print("\nsubdomain layout (M=10, beta=1/2, dx=1/360):")
for m in range(1, 11):
    i = m - 1
    print("  m=%2d  K=[%.3f, %.3f]  owned=[%.2f, %.2f]  exchange at %s" % (
        m, geom.lo[i] * grid.dx, geom.hi[i] * grid.dx,
        geom.s_lo[i] * grid.dx, geom.s_hi[i] * grid.dx,
        ", ".join(f"{n * grid.dx:.3f}" for n in (geom.xch_prev[i], geom.xch_next[i]) if n >= 0),
    ))

try:
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, axes = plt.subplots(1, 2, figsize=(11, 4))
    axes[0].plot(x, sig, lw=0.7, label=r"oscillatory, $\delta$=1/81")
    axes[0].plot(x, homogenized_sigma(x), lw=2, label="homogenized")
    axes[0].set_xlabel("x")
    axes[0].set_ylabel("scattering coefficient")
    axes[0].legend()
    for m in range(1, 11):
        i = m - 1
        axes[1].plot([geom.lo[i] * grid.dx, geom.hi[i] * grid.dx], [m, m], lw=4)
        axes[1].plot([geom.s_lo[i] * grid.dx, geom.s_hi[i] * grid.dx], [m, m], "k", lw=1.5)
    axes[1].set_xlabel("x")
    axes[1].set_ylabel("subdomain")
    axes[1].set_title("subdomains (thick) and owned regions (thin)")
    fig.tight_layout()
    path = os.path.join(OUT, "media_and_layout.png")
    fig.savefig(path, dpi=130)
    print(f"\nfigure written to {path}")
except ImportError:
    print("\nmatplotlib not installed; skipping the figure")
