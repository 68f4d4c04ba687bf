"""Figures for Monte-Carlo reports."""

from __future__ import annotations

import math

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402

golden_mean = (math.sqrt(5) - 1.0) / 2.0
fig_width = 4.5

params = {
    "axes.labelsize": 10,
    "font.family": "serif",
    "font.size": 9,
    "mathtext.fontset": "stix",
    "legend.fontsize": 8,
    "xtick.labelsize": 9,
    "ytick.labelsize": 9,
    "figure.figsize": [fig_width, fig_width * golden_mean],
    "figure.dpi": 150,
    "lines.markersize": 4,
    "lines.linewidth": 1,
    "savefig.bbox": "tight",
}


def plot_mse(nus, mses, fit, path, *, title=None, reference_slope=0.5):
    """Log-log MSE against nu with the fitted line and a reference slope."""
    with plt.rc_context(params):
        fig, ax = plt.subplots()
        ax.loglog(nus, mses, "o", color="#2b8cbe", label="Monte-Carlo MSE")
        lo, hi = min(nus), max(nus)
        xs = [lo, hi]
        ax.loglog(xs, [math.exp(fit.intercept) * x ** fit.slope for x in xs], "-", color="#08589e",
                  label=f"fit, slope {fit.slope:.3f}")
        # reference line through the geometric centre of the data
        cx = math.sqrt(lo * hi)
        cy = math.exp(fit.intercept) * cx ** fit.slope
        ax.loglog(xs, [cy * (x / cx) ** reference_slope for x in xs], "--", color="0.5",
                  label=rf"$\nu^{{{reference_slope:g}}}$")
        ax.set_xlabel(r"diffusivity $\nu$")
        ax.set_ylabel("MSE")
        if title:
            ax.set_title(title)
        ax.legend(frameon=False)
        fig.savefig(path)
        plt.close(fig)


GNUPLOT_TEMPLATE = """\
# Log-log MSE figure; data only, regenerate with: gnuplot {script}
set datafile separator ','
set datafile commentschars '#'
set key autotitle columnhead
set logscale xy
set xlabel 'nu'
set ylabel 'MSE'
set terminal pngcairo size 800,500
set output '{png}'
slope = {slope:.17g}
intercept = {intercept:.17g}
plot '{data}' using 1:4 with points pt 7 title 'Monte-Carlo MSE', \\
     exp(intercept) * x**slope with lines title sprintf('fit, slope %.3f', slope)
"""


def gnuplot_script(script_name: str, data_name: str, png_name: str, fit) -> str:
    return GNUPLOT_TEMPLATE.format(script=script_name, data=data_name, png=png_name,
                                   slope=fit.slope, intercept=fit.intercept)
