"""Static PNG panels for a run: beta, I, S against their references, and gamma."""

from __future__ import annotations

from pathlib import Path
from typing import Sequence

import matplotlib

matplotlib.use("Agg")
import matplotlib.pyplot as plt  # noqa: E402


def _panel(path: Path, t, series, ylabel: str) -> Path:
    fig, ax = plt.subplots(figsize=(5, 3.5))
    for values, style, label in series:
        ax.plot(t, values, style, label=label)
    ax.set_xlabel("t (days)")
    ax.set_ylabel(ylabel)
    ax.grid(True, alpha=0.3)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, dpi=120)
    plt.close(fig)
    return path


def plot_run(records: Sequence, out_dir: Path) -> list[Path]:
    if not records:
        return []
    t = [r.t for r in records]
    paths = [
        _panel(
            out_dir / "beta.png",
            t,
            [([r.beta_applied for r in records], "-", "applied"), ([r.beta_flat for r in records], "b--", "flat")],
            "beta (1/day)",
        ),
        _panel(
            out_dir / "I.png",
            t,
            [([r.I for r in records], "-", "I"), ([r.I_ref for r in records], "b--", "I_ref")],
            "I",
        ),
        _panel(
            out_dir / "S.png",
            t,
            [([r.S for r in records], "-", "S"), ([r.S_ref for r in records], "b--", "S_ref")],
            "S",
        ),
    ]
    if any(r.gamma_est is not None for r in records):
        est = [float("nan") if r.gamma_est is None else r.gamma_est for r in records]
        paths.append(
            _panel(
                out_dir / "gamma.png",
                t,
                [([r.gamma_true for r in records], "k--", "gamma"), (est, "b-", "gamma_est")],
                "gamma (1/day)",
            )
        )
    return paths
