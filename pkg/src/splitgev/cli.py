"""Command-line pipeline: tune-covariate, fit, diagnose, predict, simulate.

Every stage reads a flat ``key = value`` config (paths relative to the
config file) and writes into ``--out``. Stages communicate only through
files in that directory, so each can be rerun on its own.

Config keys
-----------
observations, sites, covariate_raster, mesh
    Input files. ``mesh`` is optional; without it a structured
    ``mesh_n x mesh_n`` mesh covering the raster and the sites is used.
covariates
    Optional per-site covariate CSV (``site_id,covariate``); overrides the
    output of ``tune-covariate``.
smoother_r, smoother_alpha
    Fixed smoother parameters, used when no covariate file is available.
n_iter, n_burnin, n_chains, seed, F, thin, threads, newton_tol, newton_max, store_field
    Sampler settings.
quantiles
    Comma-separated probabilities for ``predict``.
sim_sites, sim_years, sim_extent, sim_mesh_n, sim_margin, sim_cellsize, sim_xi, sim_beta_mu, sim_beta_tau
    Settings for ``simulate``.
"""
from __future__ import annotations

import argparse
import hashlib
import json
import logging
import platform
import sys
from pathlib import Path

import numpy as np

from . import __version__, kernels, sparsechol
from .covariate import SmootherConfig, design_from_values, smooth_sites, tune_smoother
from .diagnostics import (
    autocorrelation,
    cdf_comparison,
    diagnostics_table,
    running_mean,
    site_residuals,
    summarize,
    trend_lrt,
    write_series_csv,
)
from .errors import MissingArtifactError, NumericalError, ValidationError
from .gevdist import GevParams
from .io import (
    SiteTable,
    ingest_observations,
    read_config,
    read_covariates,
    read_sites,
    write_config,
    write_covariates,
    write_observations,
    write_sites,
)
from .lgm import HYPER_NAMES, ModelSpec
from .meshfem import build_projection, read_mesh, structured_mesh, write_mesh
from .predict import PredictionGrid, quantile_surface
from .raster import read_ascii_grid, write_ascii_grid
from .splitsampler import SamplerConfig, read_trace, run_chains

logger = logging.getLogger("splitgev")

_INT_KEYS = ("n_iter", "n_burnin", "n_chains", "seed", "thin", "threads", "newton_max")
_FLOAT_KEYS = ("F", "newton_tol")


class Context:
    """Parsed config plus command-line overrides."""

    def __init__(self, args):
        self.args = args
        self.base = Path(".")
        self.cfg = {}
        if args.config is not None:
            self.cfg = read_config(args.config)
            self.base = Path(args.config).resolve().parent
        for key in ("seed", "chains", "iters", "burnin", "threads"):
            val = getattr(args, key, None)
            if val is not None:
                name = {"chains": "n_chains", "iters": "n_iter", "burnin": "n_burnin"}.get(key, key)
                self.cfg[name] = str(val)
        if getattr(args, "quantile", None):
            self.cfg["quantiles"] = ",".join(str(q) for q in args.quantile)
        self.out = Path(args.out)
        self.out.mkdir(parents=True, exist_ok=True)

    def path(self, key, required=True):
        if key not in self.cfg:
            if required:
                raise ValidationError(f"config key '{key}' is required")
            return None
        p = Path(self.cfg[key])
        return p if p.is_absolute() else self.base / p

    def get(self, key, default=None, cast=str):
        if key not in self.cfg:
            return default
        try:
            return cast(self.cfg[key])
        except ValueError:
            raise ValidationError(f"config key '{key}': cannot parse '{self.cfg[key]}'") from None

    def floats(self, key, default):
        if key not in self.cfg:
            return default
        try:
            return [float(v) for v in self.cfg[key].split(",") if v.strip()]
        except ValueError:
            raise ValidationError(f"config key '{key}': expected comma-separated numbers") from None

    def sampler(self) -> SamplerConfig:
        kw = {}
        for k in _INT_KEYS:
            if k in self.cfg:
                kw[k] = self.get(k, cast=int)
        for k in _FLOAT_KEYS:
            if k in self.cfg:
                kw[k] = self.get(k, cast=float)
        if "store_field" in self.cfg:
            kw["store_field"] = self.cfg["store_field"].lower() in ("1", "true", "yes")
        return SamplerConfig(**kw)


def _versions():
    import scipy

    out = {"python": platform.python_version(), "numpy": np.__version__, "scipy": scipy.__version__,
           "splitgev": __version__}
    try:
        import sksparse

        out["scikit-sparse"] = getattr(sksparse, "__version__", "unknown")
    except ImportError:
        pass
    return out


def write_manifest(ctx: Context, stage: str, extra=None) -> None:
    cfg = dict(sorted(ctx.cfg.items()))
    digest = hashlib.sha256(json.dumps(cfg, sort_keys=True).encode()).hexdigest()
    man = {
        "stage": stage,
        "config": cfg,
        "config_hash": digest,
        "seed": ctx.cfg.get("seed", "0"),
        "versions": _versions(),
        "backends": {"kernels": kernels.BACKEND, "cholesky": sparsechol.BACKEND},
        "platform": platform.platform(),
    }
    if extra:
        man.update(extra)
    (ctx.out / f"manifest_{stage}.json").write_text(json.dumps(man, indent=2, sort_keys=True) + "\n")


def _load_inputs(ctx: Context):
    sites = read_sites(ctx.path("sites"))
    obs = ingest_observations(ctx.path("observations"))
    data = obs.to_data(sites.ids)
    return sites, data


def _site_covariates(ctx: Context, sites: SiteTable):
    explicit = ctx.path("covariates", required=False)
    if explicit is not None:
        return read_covariates(explicit, sites.ids)
    tuned = ctx.out / "covariate.csv"
    if tuned.exists():
        return read_covariates(tuned, sites.ids)
    if "smoother_r" in ctx.cfg and "smoother_alpha" in ctx.cfg:
        grid = read_ascii_grid(ctx.path("covariate_raster"))
        sm = SmootherConfig(ctx.get("smoother_r", cast=float), ctx.get("smoother_alpha", cast=float))
        return smooth_sites(grid, sites.coords, sm, sites.ids)
    raise MissingArtifactError(f"expected file not found: {tuned} (run tune-covariate first)")


def _mesh(ctx: Context, sites: SiteTable):
    mp = ctx.path("mesh", required=False)
    if mp is not None:
        return read_mesh(mp)
    pts = [sites.coords]
    if "covariate_raster" in ctx.cfg:
        m = read_ascii_grid(ctx.path("covariate_raster")).meta
        pts.append(np.array([[m.xllcorner, m.yllcorner],
                             [m.xllcorner + m.ncols * m.cellsize, m.yllcorner + m.nrows * m.cellsize]]))
    allp = np.vstack(pts)
    lo, hi = allp.min(axis=0), allp.max(axis=0)
    n = ctx.get("mesh_n", 15, int)
    return structured_mesh(lo[0], hi[0], lo[1], hi[1], n, n)


def _model(ctx: Context):
    sites, data = _load_inputs(ctx)
    x = _site_covariates(ctx, sites)
    X_mu, X_tau = design_from_values(x, sites.ids)
    mesh = _mesh(ctx, sites)
    A = build_projection(mesh, sites.coords)
    outside = np.flatnonzero(~A.inside)
    if outside.size:
        raise ValidationError(f"site {sites.ids[outside[0]]} lies outside the mesh")
    return sites, mesh, ModelSpec(X_mu, X_tau, A, mesh=mesh, data=data)


# --- stages -------------------------------------------------------------------


def cmd_tune_covariate(ctx: Context) -> int:
    sites, data = _load_inputs(ctx)
    grid = read_ascii_grid(ctx.path("covariate_raster"))
    counts = data.counts
    keep = np.flatnonzero(counts > 0)
    if keep.size == 0:
        raise ValidationError("no observations to tune against")
    means = np.array([data.site(i).mean() for i in keep])
    res = tune_smoother(grid, sites.coords[keep], means)
    values = smooth_sites(grid, sites.coords, SmootherConfig(res.r, res.alpha), sites.ids)
    write_covariates(ctx.out / "covariate.csv", sites, values)
    (ctx.out / "smoother.json").write_text(
        json.dumps({"r": res.r, "alpha": res.alpha, "objective": res.objective}, indent=2) + "\n"
    )
    write_manifest(ctx, "tune-covariate")
    print(f"r = {res.r:.6g}, alpha = {res.alpha:.6g}, objective = {res.objective:.6g}")
    return 0


def cmd_fit(ctx: Context) -> int:
    sites, mesh, model = _model(ctx)
    config = ctx.sampler()
    tdir = ctx.out / "traces"
    traces = run_chains(config, model, tdir)
    write_mesh(mesh, ctx.out / "mesh_used.txt")
    info = {"site_ids": sites.ids, "n_chains": config.n_chains, "n_iter": config.n_iter,
            "n_burnin": config.n_burnin, "thin": config.thin, "store_field": config.store_field}
    (ctx.out / "fit.json").write_text(json.dumps(info, indent=2) + "\n")
    errors = [t.meta["error"] for t in traces if t.meta.get("error")]
    write_manifest(ctx, "fit", {"chain_errors": errors})
    for t in traces:
        a = t.acceptance
        print(f"chain {t.meta['chain']}: {len(t)} records, acceptance eta {a['eta_mean']:.3f}, "
              f"xi {a['xi']:.3f}, nu/theta {a['nu_theta']:.3f}")
    if errors:
        for e in errors:
            print(f"chain failure: {e}", file=sys.stderr)
        return 2
    return 0


def _load_fit(ctx: Context):
    fp = ctx.out / "fit.json"
    if not fp.exists():
        raise MissingArtifactError(f"expected file not found: {fp} (run fit first)")
    info = json.loads(fp.read_text())
    traces = []
    for c in range(info["n_chains"]):
        p = ctx.out / "traces" / f"chain_{c}.csv"
        if not p.exists():
            raise MissingArtifactError(f"expected file not found: {p}")
        traces.append(read_trace(p))
    burn = -(-info["n_burnin"] // info["thin"])
    return info, traces, burn


def cmd_diagnose(ctx: Context) -> int:
    info, traces, burn = _load_fit(ctx)
    ddir = ctx.out / "diagnostics"
    (ddir / "series").mkdir(parents=True, exist_ok=True)
    (ddir / "cdf").mkdir(exist_ok=True)
    summ = summarize(traces, burn)
    summ.to_csv(ddir / "summary.csv")
    rows = diagnostics_table(traces, burn)
    with open(ddir / "convergence.csv", "w") as fh:
        fh.write("parameter,gelman_rubin,degenerate,ess\n")
        for nm, gr, deg, ess in rows:
            fh.write(f"{nm},{gr!r},{int(deg)},{ess!r}\n")
    scalar = ["xi"] + [n for n in traces[0].names if n.startswith("beta_")] + list(HYPER_NAMES)
    post = [t.samples[burn:] for t in traces]
    nmin = min(len(p) for p in post)
    max_lag = max(min(100, nmin - 1), 0)
    for nm in scalar:
        j = traces[0].index(nm)
        cols = {"iteration": np.arange(nmin)}
        acf_cols = {"lag": np.arange(max_lag + 1)}
        for c, p in enumerate(post):
            cols[f"chain_{c}"] = running_mean(p[:nmin, j])
            if nmin > 1:
                acf_cols[f"chain_{c}"] = autocorrelation(p[:nmin, j], max_lag).values
        write_series_csv(ddir / "series" / f"{nm}_running_mean.csv", cols)
        if nmin > 1:
            write_series_csv(ddir / "series" / f"{nm}_acf.csv", acf_cols)
    sites, data = _load_inputs(ctx)
    J = data.n_sites
    mu = np.array([summ.row(f"mu_{i + 1}")["mean"] for i in range(J)])
    tau = np.array([summ.row(f"tau_{i + 1}")["mean"] for i in range(J)])
    xi = summ.row("xi")["mean"]
    for i, sid in enumerate(sites.ids):
        if data.counts[i] == 0:
            continue
        tab = cdf_comparison(data.site(i), GevParams(float(mu[i]), float(tau[i]), float(xi)))
        write_series_csv(ddir / "cdf" / f"site_{sid}.csv",
                         {"y": tab[:, 0], "ecdf": tab[:, 1], "model_cdf": tab[:, 2]})
    trend = {}
    if data.years is not None and len(np.unique(data.years)) >= 3:
        res = site_residuals(data, mu, tau, xi)
        stat, pval = trend_lrt(res, data.years)
        trend = {"statistic": stat, "p_value": pval}
        (ddir / "trend.json").write_text(json.dumps(trend, indent=2) + "\n")
    write_manifest(ctx, "diagnose")
    worst = max((r[1] for r in rows if np.isfinite(r[1])), default=float("nan"))
    print(f"max Gelman-Rubin {worst:.4f}; summary in {ddir / 'summary.csv'}")
    if trend:
        print(f"trend LRT statistic {trend['statistic']:.4g}, p = {trend['p_value']:.4g}")
    return 0


def cmd_predict(ctx: Context) -> int:
    info, traces, burn = _load_fit(ctx)
    grid_raster = read_ascii_grid(ctx.path("covariate_raster"))
    mp = ctx.out / "mesh_used.txt"
    if not mp.exists():
        raise MissingArtifactError(f"expected file not found: {mp}")
    mesh = read_mesh(mp)
    grid = PredictionGrid(grid_raster, mesh)
    probs = ctx.floats("quantiles", [0.95])
    surfaces = quantile_surface(traces, probs, grid, burn)
    pdir = ctx.out / "predict"
    pdir.mkdir(exist_ok=True)
    for key, s in surfaces.items():
        s.write(pdir / f"{key}.asc")
    write_manifest(ctx, "predict")
    print(f"wrote {len(surfaces)} rasters to {pdir}")
    return 0


def cmd_simulate(ctx: Context) -> int:
    from .simulate import simulate

    seed = ctx.get("seed", 0, int)
    sim = simulate(
        n_sites=ctx.get("sim_sites", 20, int),
        n_years=ctx.get("sim_years", 50, int),
        seed=seed,
        extent=ctx.get("sim_extent", 150.0, float),
        mesh_n=ctx.get("sim_mesh_n", 15, int),
        site_margin=ctx.get("sim_margin", ctx.get("sim_extent", 150.0, float) * 2 / 15, float),
        beta_mu=ctx.floats("sim_beta_mu", (2.4, 11.0)),
        beta_tau=ctx.floats("sim_beta_tau", (1.5, 0.7)),
        xi=ctx.get("sim_xi", 0.1, float),
        cellsize=ctx.get("sim_cellsize", 5.0, float),
    )
    if np.any(sim.data.y <= 0):
        raise ValidationError("simulated maxima include non-positive values; lower the scale or change the seed")
    out = ctx.out
    ids = [f"S{i + 1:03d}" for i in range(sim.model.J)]
    table = SiteTable(ids, sim.sites)
    write_sites(out / "sites.csv", table)
    write_observations(out / "observations.csv", ids, sim.data)
    write_covariates(out / "covariates.csv", table, sim.covariate)
    write_ascii_grid(sim.raster, out / "covariate.asc")
    write_mesh(sim.mesh, out / "mesh.txt")
    truth = {k: (np.asarray(v).tolist()) for k, v in sim.truth.items()}
    truth["site_ids"] = ids
    (out / "truth.json").write_text(json.dumps(truth, indent=2) + "\n")
    write_config(out / "config.txt", {
        "observations": "observations.csv",
        "sites": "sites.csv",
        "covariate_raster": "covariate.asc",
        "covariates": "covariates.csv",
        "mesh": "mesh.txt",
        "seed": seed,
    })
    write_manifest(ctx, "simulate")
    print(f"simulated {sim.model.J} sites x {ctx.get('sim_years', 50, int)} years into {out}")
    return 0


COMMANDS = {
    "tune-covariate": cmd_tune_covariate,
    "fit": cmd_fit,
    "diagnose": cmd_diagnose,
    "predict": cmd_predict,
    "simulate": cmd_simulate,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(prog="splitgev", description=__doc__.split("\n")[0])
    ap.add_argument("--version", action="version", version=__version__)
    sub = ap.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="key = value config file")
        p.add_argument("--out", default="out", help="output directory")
        p.add_argument("--seed", type=int)
        p.add_argument("--chains", type=int)
        p.add_argument("--iters", type=int)
        p.add_argument("--burnin", type=int)
        p.add_argument("--threads", type=int)
        p.add_argument("--quantile", type=float, action="append")
        p.add_argument("-v", "--verbose", action="store_true")
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.ERROR,
                        format="%(levelname)s %(name)s: %(message)s")
    try:
        ctx = Context(args)
        return COMMANDS[args.command](ctx)
    except ValidationError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except NumericalError as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
