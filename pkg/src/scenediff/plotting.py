"""Figures: an SVG scene view for samples and matplotlib report charts."""

import math
from xml.sax.saxutils import quoteattr

import numpy as np

from .scenario import Role, preprocess_world_centric

PX_PER_M = 4.0
MARGIN_M = 5.0
SAMPLE_COLORS = ("#d62728", "#2ca02c", "#9467bd", "#ff7f0e", "#17becf", "#e377c2", "#8c564b", "#bcbd22")


def _fmt(v):
    return f"{v:.2f}"


def _points_attr(xy, x0, y1):
    # y axis flipped so north is up
    return " ".join(f"{_fmt((x - x0) * PX_PER_M)},{_fmt((y1 - y) * PX_PER_M)}" for x, y in xy)


def scene_svg(scene, bundles=()):
    """Render lanes, other agents, ground-truth futures and sampled trajectories.

    ``bundles`` are world-centric outputs of the sampler for this scene; they
    are shifted back to scene coordinates before drawing.
    """
    center = preprocess_world_centric(scene).world_center
    th = scene.horizon_history
    clouds = [lane.points for lane in scene.lanes] + [a.positions for a in scene.agents]
    clouds += [b.positions.reshape(-1, 2) + center for b in bundles]
    allpts = np.concatenate([np.asarray(c).reshape(-1, 2) for c in clouds if len(c)]) if clouds else np.zeros((1, 2))
    lo = allpts.min(axis=0) - MARGIN_M
    hi = allpts.max(axis=0) + MARGIN_M
    width, height = (hi - lo) * PX_PER_M
    x0, y1 = lo[0], hi[1]

    out = [
        '<?xml version="1.0" encoding="UTF-8"?>',
        f'<svg xmlns="http://www.w3.org/2000/svg" width="{_fmt(width)}" height="{_fmt(height)}" '
        f'viewBox="0 0 {_fmt(width)} {_fmt(height)}">',
        f'<metadata>scene={quoteattr(scene.scene_id)} px_per_m={PX_PER_M} origin_x={_fmt(x0)} origin_y={_fmt(y1)}</metadata>',
        '<rect width="100%" height="100%" fill="white"/>',
    ]
    for lane in scene.lanes:
        out.append(f'<polyline class="lane" id={quoteattr(lane.lane_id)} fill="none" stroke="#999999" '
                   f'stroke-width="1" points="{_points_attr(lane.points, x0, y1)}"/>')
    for agent in scene.agents:
        cx, cy = agent.positions[th - 1]
        sx, sy = _fmt((cx - x0) * PX_PER_M), _fmt((y1 - cy) * PX_PER_M)
        if agent.role is Role.PREDICTED:
            out.append(f'<polyline class="gt" fill="none" stroke="#333333" stroke-width="1.5" '
                       f'stroke-dasharray="4 3" points="{_points_attr(agent.positions[th - 1:], x0, y1)}"/>')
            out.append(f'<circle class="predicted-agent" cx="{sx}" cy="{sy}" r="4" fill="#333333"/>')
        else:
            out.append(f'<circle class="other-agent" cx="{sx}" cy="{sy}" r="4" fill="#1f77b4"/>')
    for k, bundle in enumerate(bundles):
        color = SAMPLE_COLORS[k % len(SAMPLE_COLORS)]
        for agent_id, traj in zip(bundle.agent_ids, bundle.positions):
            out.append(f'<polyline class="sample" data-agent={quoteattr(agent_id)} data-seed="{bundle.sample_seed}" '
                       f'fill="none" stroke="{color}" stroke-width="1.5" points="{_points_attr(traj + center, x0, y1)}"/>')
    out.append("</svg>")
    return "\n".join(out) + "\n"


# ------------------------------------------------------------ matplotlib


def _pyplot():
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    return plt


def _save(fig, path):
    # no Software/date tags so reruns are byte-identical
    fig.savefig(path, dpi=100, metadata={"Software": None})
    _pyplot().close(fig)


def distribution_figure(generated, reference, path):
    """Histograms of pooled per-step speeds and headings, generated vs ground truth."""
    plt = _pyplot()
    fig, axes = plt.subplots(1, 2, figsize=(9, 3.5))
    for ax, attr, label, bins in ((axes[0], "speeds", "speed (m/s)", 30),
                                  (axes[1], "headings", "heading (rad)", np.linspace(-math.pi, math.pi, 37))):
        gen = np.concatenate([np.ravel(getattr(b, attr)) for b in generated])
        ref = np.concatenate([np.ravel(getattr(b, attr)) for b in reference])
        if not np.iterable(bins):
            bins = np.histogram_bin_edges(np.concatenate([gen, ref]), bins=bins)
        ax.hist(ref, bins=bins, density=True, alpha=0.5, label="ground truth", color="#1f77b4")
        ax.hist(gen, bins=bins, density=True, alpha=0.5, label="generated", color="#d62728")
        ax.set_xlabel(label)
        ax.set_ylabel("density")
    axes[0].legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)


def ablation_figure(reports, path):
    """Grouped bars of ADE and FDE per ablation variant."""
    plt = _pyplot()
    names = list(reports)
    x = np.arange(len(names))
    fig, ax = plt.subplots(figsize=(7, 3.5))
    ax.bar(x - 0.2, [reports[n].ade for n in names], 0.4, label="ADE")
    ax.bar(x + 0.2, [reports[n].fde for n in names], 0.4, label="FDE")
    ax.set_xticks(x)
    ax.set_xticklabels([n.replace("_", " ") for n in names], fontsize=8)
    ax.set_ylabel("error (m)")
    ax.legend(frameon=False)
    fig.tight_layout()
    _save(fig, path)
