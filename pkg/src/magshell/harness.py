"""Command-line experiments: h-sweeps, k-sweeps and reduced minimization written as CSV.

    magshell <experiment> --config <path> [--out <dir>]

Config files are ``key = value`` lines; ``#`` starts a comment and unknown
keys are rejected.  Exit status is 0 on success, 2 for configuration
errors and 3 for numerical failures.
"""

from __future__ import annotations

import argparse
import hashlib
import logging
import sys
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from magshell import maxwell, qforms
from magshell.energy3d import strain, total_energy
from magshell.errors import ConfigError, NumericalError
from magshell.geometry import Midsurface, ShellFrame, detect_h0, expansion_residuals
from magshell.material import MaterialModel
from magshell.rates import RateFit, fit_rate
from magshell.recovery import LimitTriple, build_recovery_state, limit_energy
from magshell.reduced2d import Grid2D, MinimizeOptions, ReducedState, minimize
from magshell.rigidity import scaling_report

log = logging.getLogger("magshell")

EXPERIMENTS = ("geometry-check", "qform-gap", "stray-film", "recovery-converge",
               "rigidity-scaling", "minimize-reduced")


def _floats(text):
    return tuple(float(t) for t in text.split(",") if t.strip())


def _ints(text):
    return tuple(int(t) for t in text.split(",") if t.strip())


def _bool(text):
    t = text.strip().lower()
    if t in ("true", "yes", "1", "on"):
        return True
    if t in ("false", "no", "0", "off"):
        return False
    raise ValueError(f"not a boolean: {text!r}")


def _words(text):
    return tuple(t.strip() for t in text.split(",") if t.strip())


# key -> (parser, default)
SCHEMA = {
    "seed": (int, 0),
    "plot": (_bool, False),
    "h_list": (_floats, None),
    "geometry.profile": (str, "sines"),
    "geometry.amplitude": (float, 0.5),
    "geometry.lx": (float, 1.0),
    "geometry.ly": (float, 1.0),
    "geometry.grid": (_ints, (48, 48, 12)),
    "material.coupling": (float, 1.0),
    "material.k": (float, 100.0),
    "material.det_tol": (float, 1e-8),
    "energy.alpha": (float, 0.1),
    "energy.beta": (float, 9.0),
    "energy.p": (float, 4.0),
    "maxwell.pad": (float, 2.0),
    "maxwell.resolution": (int, 64),
    "maxwell.layers": (int, 2),
    "maxwell.subsamples": (int, 2),
    "maxwell.direction": (_floats, (0.0, 0.0, 1.0)),
    "qform.k_list": (_floats, (1.0, 10.0, 100.0, 1000.0)),
    "qform.samples": (int, 200),
    "recovery.profile": (str, "smooth"),
    "recovery.h_list": (_floats, None),
    "reduced.grid": (_ints, (16, 16)),
    "reduced.which": (_words, ("lambda",)),
    "reduced.step": (float, 1.0),
    "reduced.max_iters": (int, 500),
    "reduced.tol": (float, 1e-8),
    "reduced.runs": (int, 3),
    "reduced.noise": (float, 0.1),
}

DEFAULT_H = {
    "geometry-check": (0.2, 0.1, 0.05, 0.025),
    "stray-film": (0.2, 0.1, 0.05),
}
DEFAULT_SWEEP = (0.2, 0.141, 0.1, 0.071, 0.05)


@dataclass(frozen=True)
class ExperimentConfig:
    experiment: str
    values: dict
    text_hash: str

    def __getitem__(self, key):
        return self.values[key]

    @property
    def h_list(self):
        return self.values["h_list"]

    def midsurface(self):
        return Midsurface.from_profile(self["geometry.profile"], self["geometry.amplitude"],
                                       self["geometry.lx"], self["geometry.ly"])

    def model(self):
        return MaterialModel(p=self["energy.p"], coupling=self["material.coupling"],
                             penalization_k=self["material.k"], det_tol=self["material.det_tol"])


def parse_config(text, experiment):
    if experiment not in EXPERIMENTS:
        raise ConfigError("experiment", f"unknown experiment {experiment!r}")
    given = {}
    for lineno, raw in enumerate(text.splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigError(f"line {lineno}", f"expected key = value, got {raw.strip()!r}")
        key, value = (s.strip() for s in line.split("=", 1))
        if key not in SCHEMA:
            raise ConfigError(key, "unknown configuration key")
        if key in given:
            raise ConfigError(key, "key given twice")
        try:
            given[key] = SCHEMA[key][0](value)
        except ValueError as exc:
            raise ConfigError(key, str(exc)) from exc
    values = {k: d for k, (_, d) in SCHEMA.items()}
    values.update(given)
    if values["h_list"] is None:
        values["h_list"] = values["recovery.h_list"]
    if values["h_list"] is None:
        values["h_list"] = DEFAULT_H.get(experiment, DEFAULT_SWEEP)
    canon = "\n".join(f"{k}={given[k]!r}" for k in sorted(given))
    digest = hashlib.sha256(f"{experiment}\n{canon}".encode()).hexdigest()[:16]
    cfg = ExperimentConfig(experiment, values, digest)
    validate(cfg)
    return cfg


def validate(cfg: ExperimentConfig):
    hs = cfg.h_list
    if len(hs) == 0:
        raise ConfigError("h_list", "must not be empty")
    if any(h <= 0 for h in hs):
        raise ConfigError("h_list", "entries must be positive")
    if any(b >= a for a, b in zip(hs, hs[1:])):
        raise ConfigError("h_list", "must be strictly decreasing")
    if not cfg["energy.p"] > 3:
        raise ConfigError("energy.p", "growth exponent must exceed 3")
    if not cfg["energy.beta"] > 2 * cfg["energy.p"]:
        raise ConfigError("energy.beta", "must exceed 2 * energy.p")
    if len(cfg["geometry.grid"]) != 3 or min(cfg["geometry.grid"]) < 3:
        raise ConfigError("geometry.grid", "needs three sizes of at least 3")
    if len(cfg["reduced.grid"]) != 2 or min(cfg["reduced.grid"]) < 4:
        raise ConfigError("reduced.grid", "needs two sizes of at least 4")
    if cfg["maxwell.pad"] < 2:
        raise ConfigError("maxwell.pad", "padding factor must be at least 2")
    if len(cfg["maxwell.direction"]) != 3 or not np.any(cfg["maxwell.direction"]):
        raise ConfigError("maxwell.direction", "needs a nonzero 3-vector")
    if set(cfg["reduced.which"]) - {"u", "v", "lambda"}:
        raise ConfigError("reduced.which", "allowed variables are u, v, lambda")
    try:
        mid = cfg.midsurface()
    except Exception as exc:
        raise ConfigError("geometry.profile", str(exc)) from exc
    if cfg.experiment in ("geometry-check", "recovery-converge", "rigidity-scaling"):
        h0 = detect_h0(mid, hs[0], tuple(cfg["geometry.grid"]))
        if h0 < hs[0]:
            raise ConfigError("h_list", f"largest thickness exceeds the admissible h0 ~ {h0:.3g}")
    if cfg.experiment in ("rigidity-scaling", "geometry-check") and len(hs) < 3:
        raise ConfigError("h_list", "rate fits need at least three thicknesses")


# --- output ---------------------------------------------------------------

def _fmt(x):
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, str):
        return x
    return format(float(x), ".12g")


def write_csv(path: Path, columns, rows, cfg: ExperimentConfig):
    lines = [f"# experiment={cfg.experiment} config_hash={cfg.text_hash}", ",".join(columns)]
    lines += [",".join(_fmt(v) for v in row) for row in rows]
    path.write_bytes(("\n".join(lines) + "\n").encode("utf-8"))
    return path


def write_fits(path: Path, fits, cfg):
    rows = [(name, f.slope, f.intercept, f.residual) for name, f in fits.items()]
    return write_csv(path, ("quantity", "slope", "intercept", "residual"), rows, cfg)


def _plot(path, x, series, xlabel):
    import matplotlib

    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    fig, ax = plt.subplots(figsize=(5, 4))
    for name, y in series.items():
        ax.loglog(x, y, marker="o", label=name)
    ax.set_xlabel(xlabel)
    ax.legend()
    fig.tight_layout()
    fig.savefig(path, format="svg", metadata={"Date": None})
    plt.close(fig)


# --- experiments ----------------------------------------------------------

def geometry_check(cfg):
    mid = cfg.midsurface()
    rows = []
    for h in cfg.h_list:
        r = expansion_residuals(ShellFrame(mid, h, tuple(cfg["geometry.grid"])))
        rows.append((h, r["jacobian"], r["kappa"], r["inverse"]))
    cols = ("h", "jacobian_residual", "kappa_residual", "inverse_residual")
    fits = {c: fit_rate((r[0], r[i]) for r in rows) for i, c in enumerate(cols) if i}
    return cols, rows, fits


def qform_gap(cfg):
    rng = np.random.default_rng(cfg["seed"])
    n = cfg["qform.samples"]
    H = rng.standard_normal((n, 2, 2))
    nu = rng.standard_normal((n, 3))
    nu /= np.linalg.norm(nu, axis=1, keepdims=True)
    model = cfg.model()
    inc, _ = qforms.q2_incompressible(model, H, nu)
    rows = []
    for k in cfg["qform.k_list"]:
        pen, _ = qforms.q2_penalized(model, H, nu, k)
        C = qforms.check_gap(model, H, nu, k)
        rows.append((k, float(np.mean(inc - pen)), float(np.max(inc - pen)),
                     float(np.min(inc - pen)), float(np.max(C))))
    return ("k", "gap_mean", "gap_max", "gap_min", "empirical_C"), rows, {}


def stray_film(cfg):
    lx, ly = cfg["geometry.lx"], cfg["geometry.ly"]
    n = cfg["maxwell.resolution"]
    d = np.asarray(cfg["maxwell.direction"], float)
    d /= np.linalg.norm(d)
    target = 0.5 * lx * ly * d[2] ** 2
    rows = []
    for h in cfg.h_list:
        f = maxwell.plate_field(lx, ly, h, n, n, cfg["maxwell.layers"], d)
        s = maxwell.solve_stray(f, cfg["maxwell.pad"])
        if s.energy > 0.5 * f.l2_norm_sq() * (1 + 1e-12):
            raise NumericalError("stray field violates the stability bound")
        e = s.energy / h
        rel = abs(e - target) / target if target > 0 else e
        rows.append((h, e, target, rel, s.energy <= 0.5 * f.l2_norm_sq() * (1 + 1e-12)))
    return ("h", "E_mag", "E_limit", "rel_err", "stable"), rows, {}


def _recovery_sweep(cfg):
    mid = cfg.midsurface()
    model = cfg.model()
    triple = LimitTriple.from_profile(cfg["recovery.profile"], mid.lx, mid.ly)
    out = []
    for h in cfg.h_list:
        frame = ShellFrame(mid, h, tuple(cfg["geometry.grid"]))
        out.append((frame, build_recovery_state(triple, frame, model, cfg["energy.beta"])))
    return mid, model, triple, out


def recovery_converge(cfg):
    mid, model, triple, sweep = _recovery_sweep(cfg)
    limit = limit_energy(triple, mid, model, cfg["energy.alpha"])["total"]
    rows = []
    for frame, rec in sweep:
        e = total_energy(rec.state, frame, model, cfg["energy.alpha"], cfg["maxwell.pad"],
                         subsamples=cfg["maxwell.subsamples"])
        F, _ = strain(rec.state, frame)
        rel = abs(e.total - limit) / limit if limit > 0 else e.total
        rows.append((frame.h, e.elastic, e.exchange, e.magnetostatic, e.total, e.det_ok,
                     e.injective_ok, limit, rel, float(np.max(np.abs(np.linalg.det(F) - 1))),
                     float(np.max(np.abs(rec.d3_eta - 1)))))
    cols = ("h", "E_el", "E_exc", "E_mag", "E_total", "det_ok", "inj_ok", "E_limit", "rel_err",
            "det_err", "d3eta_err")
    fits = {}
    if len(rows) >= 3 and all(r[10] > 0 for r in rows):
        fits["d3eta_err"] = fit_rate((r[0], r[10]) for r in rows)
    return cols, rows, fits


def rigidity_scaling(cfg):
    _, model, _, sweep = _recovery_sweep(cfg)
    frames = [f for f, _ in sweep]
    states = [r.state for _, r in sweep]
    rep = scaling_report(states, frames, model, cfg["energy.beta"])
    rows, fits = [], {}
    for q, vals in rep.norms.items():
        for h, v in zip(rep.hs, vals):
            rows.append((h, q, *v))
        for name, f in zip(("norm_i", "norm_ii", "norm_iii"), rep.fits[q]):
            fits[f"{name}_q{q:g}"] = f
    return ("h", "q", "norm_i", "norm_ii", "norm_iii"), rows, fits


def minimize_reduced(cfg):
    mid = cfg.midsurface()
    model = cfg.model()
    grid = Grid2D(mid, tuple(cfg["reduced.grid"]))
    triple = LimitTriple.from_profile(cfg["recovery.profile"], mid.lx, mid.ly)
    base = ReducedState.from_triple(grid, triple)
    which = cfg["reduced.which"]
    opts = MinimizeOptions(step=cfg["reduced.step"], max_iters=cfg["reduced.max_iters"],
                           tol=cfg["reduced.tol"])
    rows = []
    for run in range(cfg["reduced.runs"]):
        rng = np.random.default_rng(cfg["seed"] + run)
        eps = cfg["reduced.noise"]
        u, v, lam = base.u, base.v, base.lam
        if "u" in which:
            u = u + eps * rng.standard_normal(u.shape)
        if "v" in which:
            v = v + eps * rng.standard_normal(v.shape)
        if "lambda" in which:
            lam = lam + eps * rng.standard_normal(lam.shape)
            lam = lam / np.linalg.norm(lam, axis=1, keepdims=True)
        res = minimize(ReducedState(u, v, lam), grid, model, which, cfg["energy.alpha"], opts)
        for it, E, terms, gn in res.log:
            rows.append((run, it, E, terms["membrane"], terms["bending"], terms["exchange"],
                         terms["magnetostatic"], gn))
        if any(b > a for a, b in zip(res.energies, res.energies[1:])):
            raise NumericalError("reduced minimization increased the energy")
        log.info("run %d: E %.6g -> %.6g in %d iterations (converged=%s)", run,
                 res.energies[0], res.energies[-1], len(res.energies) - 1, res.converged)
    cols = ("run", "iter", "E", "membrane", "bending", "exchange", "magnetostatic", "grad_norm")
    return cols, rows, {}


RUNNERS = {
    "geometry-check": geometry_check,
    "qform-gap": qform_gap,
    "stray-film": stray_film,
    "recovery-converge": recovery_converge,
    "rigidity-scaling": rigidity_scaling,
    "minimize-reduced": minimize_reduced,
}


def run(cfg: ExperimentConfig, out_dir):
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    cols, rows, fits = RUNNERS[cfg.experiment](cfg)
    stem = cfg.experiment.replace("-", "_")
    paths = [write_csv(out / f"{stem}.csv", cols, rows, cfg)]
    if fits:
        paths.append(write_fits(out / f"{stem}_fits.csv", fits, cfg))
    if cfg["plot"] and rows and cols[0] in ("h", "k"):
        x = [r[0] for r in rows]
        series = {c: [abs(r[i]) for r in rows] for i, c in enumerate(cols) if i
                  and all(isinstance(r[i], float) and abs(r[i]) > 0 for r in rows)}
        if series and cfg.experiment != "rigidity-scaling":
            p = out / f"{stem}.svg"
            _plot(p, x, series, cols[0])
            paths.append(p)
    return paths


def _origin(exc):
    """Innermost package module on the traceback of ``exc``."""
    module = "magshell"
    tb = exc.__traceback__
    while tb is not None:
        name = tb.tb_frame.f_globals.get("__name__", "")
        if name.startswith("magshell."):
            module = name
        tb = tb.tb_next
    return module


def main(argv=None):
    parser = argparse.ArgumentParser(prog="magshell", description=__doc__.splitlines()[0])
    parser.add_argument("experiment", choices=EXPERIMENTS)
    parser.add_argument("--config", required=True, type=Path)
    parser.add_argument("--out", type=Path, default=Path("."))
    parser.add_argument("-v", "--verbose", action="store_true")
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        text = args.config.read_text(encoding="utf-8")
    except OSError as exc:
        print(f"magshell: config error: cannot read {args.config}: {exc}", file=sys.stderr)
        return 2
    try:
        cfg = parse_config(text, args.experiment)
        paths = run(cfg, args.out)
    except ConfigError as exc:
        print(f"magshell: config error: {exc}", file=sys.stderr)
        return 2
    except (NumericalError, ArithmeticError) as exc:
        module = _origin(exc)
        print(f"magshell: numerical failure in {module} ({type(exc).__name__}): {exc}",
              file=sys.stderr)
        return 3
    for p in paths:
        print(p)
    return 0


__all__ = ["ExperimentConfig", "RateFit", "fit_rate", "main", "parse_config", "run"]

if __name__ == "__main__":
    sys.exit(main())
