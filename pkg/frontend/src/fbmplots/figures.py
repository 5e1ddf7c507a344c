"""Figure builders, one per experiment output family.

Every builder takes the input CSV paths plus the run manifest and returns a
plain :class:`matplotlib.figure.Figure`.  Figures are drawn without pyplot
so no global state is touched, and :func:`render` saves them with fixed
geometry and stripped metadata, which keeps the PNG bytes identical from
run to run on the same library versions.
"""

from __future__ import annotations

from dataclasses import dataclass
from pathlib import Path

import numpy as np
from matplotlib import colormaps
from matplotlib.figure import Figure

from . import csvio

_FIGSIZE = (6.4, 4.4)
_DPI = 110


def _new_axes(title):
    fig = Figure(figsize=_FIGSIZE, dpi=_DPI)
    ax = fig.add_subplot()
    ax.set_title(title, fontsize=10)
    return fig, ax


def _exactly_one(inputs, kind):
    if len(inputs) != 1:
        raise ValueError(f"{kind} takes exactly one input CSV, got {len(inputs)}")
    return inputs[0]


def _render_paths(inputs, manifest):
    meta = None
    series = []
    for path in inputs:
        comments, cols = csvio.read_table(path, required=("t", "b1"))
        meta = meta or comments
        series.append((path.stem, cols["t"], cols["b1"]))
    title = (
        f"{meta.get('method', '?')} sample paths, H={meta.get('H', '?')} "
        f"(run seed {manifest.get('seed', '?')})"
    )
    fig, ax = _new_axes(title)
    for stem, t, b in series:
        ax.plot(t, b, linewidth=1.0, label=stem)
    ax.set_xlabel("t")
    ax.set_ylabel("first path component")
    ax.grid(alpha=0.3)
    if len(series) <= 8:
        ax.legend(fontsize=7, loc="best")
    return fig


def _render_cov_error(inputs, manifest):
    if len(inputs) < 2:
        raise ValueError("cov-error needs at least two path CSVs from one run")
    t_ref, meta, rows = None, None, []
    for path in inputs:
        comments, cols = csvio.read_table(path, required=("t", "b1"))
        if t_ref is None:
            if "H" not in comments:
                raise csvio.SchemaError(
                    f"{path.name}: missing column(s) H in the comment header; "
                    "the covariance target needs it"
                )
            t_ref, meta = cols["t"], comments
        elif cols["t"].shape != t_ref.shape or not np.array_equal(cols["t"], t_ref):
            raise ValueError(
                f"{path.name}: time grid differs from {inputs[0].name}; "
                "covariance needs all paths on one grid"
            )
        rows.append(cols["b1"])
    hurst = float(meta["H"])
    t = t_ref[1:]
    block = np.stack(rows)[:, 1:]
    empirical = block.T @ block / len(rows)
    tt, ss = np.meshgrid(t, t, indexing="ij")
    target = 0.5 * (tt ** (2 * hurst) + ss ** (2 * hurst) - np.abs(tt - ss) ** (2 * hurst))
    fig, ax = _new_axes(
        f"covariance error over {len(rows)} paths, H={hurst:g} "
        f"(run seed {manifest.get('seed', '?')})"
    )
    image = ax.imshow(
        np.abs(empirical - target),
        origin="lower",
        extent=(t[0], t[-1], t[0], t[-1]),
        cmap="magma",
    )
    fig.colorbar(image, ax=ax, label="|empirical - target|")
    ax.set_xlabel("s")
    ax.set_ylabel("t")
    return fig


def _require_keys(summary, keys, path):
    missing = [key for key in keys if key not in summary]
    if missing:
        raise csvio.SchemaError(
            f"{path.name}: missing column(s) {', '.join(missing)} in the key,value table"
        )


def _render_moment_fit(inputs, manifest):
    path = _exactly_one(inputs, "moment-fit")
    comments, summary = csvio.read_summary(path)
    _require_keys(summary, ("slope", "intercept", "pair0_dist"), path)
    dists, moments = [], []
    j = 0
    while f"pair{j}_dist" in summary:
        dists.append(summary[f"pair{j}_dist"])
        moments.append(summary[f"pair{j}_moment"])
        j += 1
    dists, moments = np.asarray(dists), np.asarray(moments)
    slope, intercept = summary["slope"], summary["intercept"]
    fig, ax = _new_axes(
        f"gap moment vs initial separation, drift {comments.get('drift', '?')}, "
        f"H={comments.get('H', '?')} (run seed {manifest.get('seed', '?')})"
    )
    ax.loglog(dists, moments, "o", markersize=6, label="estimates")
    xs = np.geomspace(dists.min(), dists.max(), 64)
    ax.loglog(xs, np.exp(intercept) * xs**slope, "--", linewidth=1.2, label="power-law fit")
    note = f"slope = {slope:.3f}"
    if "r2" in summary:
        note += f"\nR^2 = {summary['r2']:.4f}"
    ax.annotate(note, xy=(0.05, 0.78), xycoords="axes fraction", fontsize=9)
    ax.set_xlabel("initial separation")
    ax.set_ylabel(f"terminal gap moment, p={comments.get('p', '?')}")
    ax.grid(alpha=0.3, which="both")
    ax.legend(fontsize=8)
    return fig


def _render_tail_fit(inputs, manifest):
    path = _exactly_one(inputs, "tail-fit")
    comments, cols = csvio.read_table(path, required=("lambda", "phat"))
    summary_path = path.parent / "summary.csv"
    if not summary_path.is_file():
        raise FileNotFoundError(
            f"{summary_path} not found; the fitted line lives in the run's summary.csv"
        )
    _, summary = csvio.read_summary(summary_path)
    _require_keys(summary, ("slope", "intercept", "r2"), summary_path)
    lam, phat = cols["lambda"], cols["phat"]
    keep = phat > 0
    x = lam[keep] ** 2
    fig, ax = _new_axes(
        f"exceedance decay, drift {comments.get('drift', '?')}, "
        f"H={comments.get('H', '?')} (run seed {manifest.get('seed', '?')})"
    )
    ax.plot(x, np.log(phat[keep]), "o", markersize=5, label="estimates")
    xs = np.linspace(x.min(), x.max(), 64)
    ax.plot(
        xs,
        summary["intercept"] + summary["slope"] * xs,
        "--",
        linewidth=1.2,
        label="log-linear fit",
    )
    ax.annotate(
        f"slope = {summary['slope']:.3f}\nR^2 = {summary['r2']:.4f}",
        xy=(0.62, 0.78),
        xycoords="axes fraction",
        fontsize=9,
    )
    ax.set_xlabel(r"$\lambda^2$")
    ax.set_ylabel("log exceedance probability")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return fig


def _load_grid_slices(path):
    comments, cols = csvio.read_table(path, required=("t", "x1", "u"))
    for key in ("n_t", "shape", "scheme"):
        if key not in comments:
            raise csvio.SchemaError(
                f"{path.name}: missing column(s) {key} in the comment header"
            )
    if "," in comments["shape"]:
        raise ValueError(f"{path.name}: only one space dimension is plottable")
    n_t, nx = int(comments["n_t"]), int(comments["shape"])
    if cols["u"].size != (n_t + 1) * nx:
        raise csvio.SchemaError(
            f"{path.name}: {cols['u'].size} rows do not tile a "
            f"{n_t + 1} x {nx} time/space grid"
        )
    x = cols["x1"][:nx]
    values = cols["u"].reshape(n_t + 1, nx)
    times = cols["t"].reshape(n_t + 1, nx)[:, 0]
    return comments["scheme"], x, times, values


def _render_transport_snapshots(inputs, manifest):
    if len(inputs) not in (1, 2):
        raise ValueError("transport-snapshots takes solution.csv plus an optional reference CSV")
    scheme, x, times, values = _load_grid_slices(inputs[0])
    fig, ax = _new_axes(
        f"transported profile, scheme {scheme} (run seed {manifest.get('seed', '?')})"
    )
    n_t = len(times) - 1
    picks = sorted({0, n_t // 3, (2 * n_t) // 3, n_t})
    palette = colormaps["viridis"]
    for rank, i in enumerate(picks):
        ax.plot(
            x,
            values[i],
            linewidth=1.2,
            color=palette(0.1 + 0.8 * rank / max(len(picks) - 1, 1)),
            label=f"t = {times[i]:g}",
        )
    if len(inputs) == 2:
        ref_scheme, ref_x, ref_times, ref_values = _load_grid_slices(inputs[1])
        ax.plot(
            ref_x,
            ref_values[-1],
            "k--",
            linewidth=1.0,
            label=f"{ref_scheme} oracle, t = {ref_times[-1]:g}",
        )
    ax.set_xlabel("x")
    ax.set_ylabel("u(t, x)")
    ax.grid(alpha=0.3)
    ax.legend(fontsize=8)
    return fig


def _render_test_integrals(inputs, manifest):
    path = _exactly_one(inputs, "test-integrals")
    _, cols = csvio.read_table(
        path, required=("phi_id", "pushforward", "reference", "rel_err")
    )
    idx = np.arange(len(cols["phi_id"]))
    width = 0.35
    fig, ax = _new_axes(
        f"pushforward vs density oracle (run seed {manifest.get('seed', '?')})"
    )
    ax.bar(idx - width / 2, cols["pushforward"], width, label="particle pushforward")
    ax.bar(idx + width / 2, cols["reference"], width, label="density oracle")
    top = np.maximum(cols["pushforward"], cols["reference"])
    for i in idx:
        ax.annotate(
            f"{cols['rel_err'][i]:.2%}",
            xy=(i, top[i]),
            xytext=(0, 3),
            textcoords="offset points",
            ha="center",
            fontsize=8,
        )
    ax.set_xticks(idx, [f"phi {int(k)}" for k in cols["phi_id"]])
    ax.set_ylabel("test-function integral")
    ax.set_ylim(0, float(top.max()) * 1.25)
    ax.legend(fontsize=8)
    return fig


KINDS = {
    "paths": _render_paths,
    "cov-error": _render_cov_error,
    "moment-fit": _render_moment_fit,
    "tail-fit": _render_tail_fit,
    "transport-snapshots": _render_transport_snapshots,
    "test-integrals": _render_test_integrals,
}


@dataclass(frozen=True)
class FigureSpec:
    """A validated render request: which figure, from which CSVs, to where."""

    kind: str
    inputs: tuple[Path, ...]
    out: Path

    @classmethod
    def build(cls, kind, inputs, out):
        if kind not in KINDS:
            raise ValueError(
                f"unknown figure kind {kind!r}; known: {', '.join(sorted(KINDS))}"
            )
        inputs = tuple(Path(p) for p in inputs)
        if not inputs:
            raise ValueError("at least one input CSV is required")
        for path in inputs:
            if not path.is_file():
                raise FileNotFoundError(f"input not found: {path}")
        out = Path(out)
        if out.suffix != ".png":
            raise ValueError(f"{out.name}: only .png output is supported")
        return cls(kind=kind, inputs=inputs, out=out)


def render(spec):
    """Draw ``spec`` and write the PNG, returning the output path.

    The manifest check runs before any CSV is parsed, and the first
    manifest labels the figure.  Saving strips the writer's software tag
    so repeated renders of the same inputs produce identical bytes.
    """
    manifests = [csvio.require_manifest(path) for path in spec.inputs]
    fig = KINDS[spec.kind](spec.inputs, manifests[0])
    spec.out.parent.mkdir(parents=True, exist_ok=True)
    fig.savefig(spec.out, format="png", metadata={"Software": None})
    return spec.out
