"""Figure rendering for the CLI report path.

Each experiment writer can drop a PNG next to its delimited output; plotting
stays behind a flag so batch runs pay nothing for it.  matplotlib is
imported lazily and driven through the Agg backend.
"""

from __future__ import annotations


def _axes(title, xlabel, ylabel):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(6.0, 3.6))
    ax.set_title(title)
    ax.set_xlabel(xlabel)
    ax.set_ylabel(ylabel)
    ax.spines["right"].set_visible(False)
    ax.spines["top"].set_visible(False)
    return fig, ax


def _save(fig, path):
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    import matplotlib.pyplot as plt

    plt.close(fig)


def simulate_figure(taus, path, label="cycle length"):
    fig, ax = _axes("regeneration cycles", label, "count")
    vals = [t for t in taus if t is not None]
    if vals:
        ax.hist(vals, bins=min(60, max(10, len(vals) // 20)), color="#4878cf")
    _save(fig, path)


def drift_figure(rows, path):
    fig, ax = _axes("contraction failure fraction", "B", "rho_hat")
    xs = [row.b_target for row in rows]
    ys = [row.rho_hat for row in rows]
    lo = [row.rho_hat - row.ci_low for row in rows]
    hi = [row.ci_high - row.rho_hat for row in rows]
    ax.errorbar(xs, ys, yerr=[lo, hi], fmt="o-", color="#d65f5f", capsize=3)
    ax.set_ylim(bottom=0.0)
    _save(fig, path)


def regen_figure(result, path):
    fig, ax = _axes("fast regeneration", "", "probability")
    ax.bar([0], [result.p_hat], width=0.5, color="#4878cf", label="empirical")
    ax.errorbar([0], [result.p_hat],
                yerr=[[result.p_hat - result.ci_low], [result.ci_high - result.p_hat]],
                fmt="none", ecolor="black", capsize=4)
    ax.axhline(result.bound, color="#d65f5f", linestyle="--", label="closed-form bound")
    ax.set_xticks([])
    ax.legend(frameon=False)
    _save(fig, path)


def walk_figure(result, path):
    fig, ax = _axes("dominating walk hitting times", "steps to reach 0", "count")
    if result.samples:
        ax.hist(result.samples, bins=min(60, max(10, len(set(result.samples)))),
                color="#4878cf")
    _save(fig, path)


def compare_figure(samples_a, samples_b, labels, metric, path):
    fig, ax = _axes(f"empirical CDFs: {metric}", metric, "F(x)")
    for samples, label, color in zip(
        (samples_a, samples_b), labels, ("#4878cf", "#d65f5f")
    ):
        xs = sorted(samples)
        ys = [(i + 1) / len(xs) for i in range(len(xs))]
        ax.step(xs, ys, where="post", label=label, color=color)
    ax.legend(frameon=False)
    _save(fig, path)


def blocks_figure(attempts, successes, path):
    fig, ax = _axes("per-level block success rate", "level", "fraction successful")
    levels = sorted(k for k in attempts if k >= 1)
    xs, ys = [], []
    for lvl in levels:
        xs.append(lvl)
        ys.append(successes.get(lvl, 0) / attempts[lvl])
    ax.plot(xs, ys, "o-", color="#4878cf")
    ax.set_ylim(0.0, 1.05)
    _save(fig, path)
