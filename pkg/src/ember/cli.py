"""Command-line front end.

    ember COMMAND --config PATH [--out DIR] [--seed N] [--threads N] [--invert-fwi-classes]

Commands: diagnose-threshold, subsample, fit, simulate, score, excursion.
Failures exit with status 1 and a single JSON line on stderr.
"""
from __future__ import annotations

import argparse
import json
import logging
import os
import platform
import sys
import time
from pathlib import Path

COMMANDS = ("diagnose-threshold", "subsample", "fit", "simulate", "score", "excursion")
LOG_LEVELS = {"error": logging.ERROR, "info": logging.INFO, "debug": logging.DEBUG}
# keys that determine a fitted model
FIT_KEYS = ("data.", "model.", "mesh.", "subsample.", "prior.", "fit.", "seed")

log = logging.getLogger("ember.cli")

DEFAULT_SIM_EFFECTS = {"COX.alpha": -7.0, "BIN.alpha": -2.0, "BETA.alpha": -0.5,
                       "GPD.alpha": 3.0, "SIZE.alpha": 2.0}


def _parser(cls=argparse.ArgumentParser):
    p = cls(prog="ember", description="Wildfire occurrence and size modelling")
    p.add_argument("command", choices=COMMANDS)
    p.add_argument("--config", required=True, help="key=value configuration file")
    p.add_argument("--out", help="output directory (overrides 'out')")
    p.add_argument("--seed", type=int, help="master seed (overrides 'seed')")
    p.add_argument("--threads", type=int, help="cap on numerical library threads")
    p.add_argument("--invert-fwi-classes", action="store_true",
                   help="give the below-quantile FWI class the selection mass p_ss")
    return p


class _ArgError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise _ArgError(message)


def _json_dump(obj, path):
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(obj, fh, sort_keys=True, indent=2, allow_nan=True)
        fh.write("\n")


def _write_csv(path, header, rows):
    import csv
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        for r in rows:
            w.writerow([repr(float(v)) if isinstance(v, float) else v for v in r])


class Run:
    """State shared by the command implementations."""

    def __init__(self, command, cfg, out):
        self.command = command
        self.cfg = cfg
        self.out = out
        self.digest = cfg.digest()
        self.seed = int(cfg.get("seed", 0))
        self.seeds = {"seed": self.seed}
        self.artifacts = []

    def file(self, name):
        self.artifacts.append(name)
        return self.out / name

    def seed_for(self, key):
        s = int(self.cfg.get(key, self.seed))
        self.seeds[key] = s
        return s

    # -- shared loaders ------------------------------------------------------------

    def season(self):
        from .grid_data import DEFAULT_SEASON
        return tuple(self.cfg.get("data.season", DEFAULT_SEASON))

    def marked_data(self, pd_key="data.pixel_days", fires_key="data.fires", u=None):
        from .grid_data import attach_marks, load_fire_events, load_pixel_days
        pd_path = self.cfg.path(pd_key)
        fires_path = self.cfg.path(fires_key)
        table = load_pixel_days(pd_path, self.season())
        events = load_fire_events(fires_path)
        if u is None:
            u = self.threshold(events.burnt_area)
        return attach_marks(table, events, u)

    def threshold(self, sizes):
        import numpy as np
        from .errors import DataError
        if "data.u" in self.cfg:
            u = float(self.cfg.get("data.u"))
        else:
            if len(sizes) == 0:
                raise DataError("no fire events to derive the threshold u from")
            u = float(np.quantile(sizes, self.cfg.get("data.u_quantile", 0.95)))
        if not u > 1:
            raise DataError(f"threshold u={u} must exceed 1 ha")
        return u

    def subsample_config(self):
        from .subsample import SubsampleConfig
        c = self.cfg
        return SubsampleConfig(p_fwi=c.get("subsample.p_fwi", 0.7), p_ss=c.get("subsample.p_ss", 0.9),
                               k_per_stratum=c.get("subsample.k_per_stratum", 2),
                               seed=self.seed_for("subsample.seed"),
                               invert_fwi_classes=c.get("subsample.invert_fwi_classes", False),
                               uniform=c.get("subsample.uniform", False))

    def spec(self):
        from .inference import ModelSpec, preset
        if "model.spec" in self.cfg:
            d = json.loads(self.cfg.path("model.spec").read_text(encoding="utf-8"))
            return ModelSpec.from_dict(d)
        return preset(self.cfg.get("model.label", "M1"))

    def priors(self):
        from dataclasses import fields
        from .errors import ConfigError
        from .inference import PriorConfig
        vals = self.cfg.section("prior.")
        known = {f.name for f in fields(PriorConfig)}
        bad = sorted(set(vals) - known)
        if bad:
            raise ConfigError(f"unknown prior setting(s) {['prior.' + b for b in bad]}")
        return PriorConfig(**vals)

    def mesh(self, table, spec):
        if not any(e.kind == "spatial" for e in spec.effects):
            return None
        from .synthetic import domain_mesh
        return domain_mesh(table, self.cfg.get("mesh.max_edge"), self.cfg.get("mesh.extension"))

    def cell_groups(self):
        if "data.cell_groups" not in self.cfg:
            return None
        import csv
        from .errors import DataError
        path = self.cfg.path("data.cell_groups")
        out = {}
        with open(path, newline="", encoding="utf-8") as fh:
            rd = csv.DictReader(fh)
            if rd.fieldnames is None or not {"cell_id", "group"} <= set(rd.fieldnames):
                raise DataError(f"{path}: expected columns cell_id,group", line=1)
            for k, row in enumerate(rd, start=2):
                try:
                    out[int(row["cell_id"])] = row["group"].strip()
                except ValueError:
                    raise DataError(f"{path}: bad cell_id {row['cell_id']!r}", line=k) from None
        return out

    def load_fit(self, path):
        from .errors import DataError
        from .inference import load_fit
        f = load_fit(path)
        if f.spec_digest != f.layout.spec.digest():
            raise DataError(f"{path}: stored spec digest does not match its model")
        return f


# -- commands ------------------------------------------------------------------------------

def cmd_diagnose_threshold(run):
    import numpy as np
    from .extremes import default_thresholds, diagnose_threshold
    from .grid_data import load_fire_events
    cfg = run.cfg
    sizes = load_fire_events(cfg.path("data.fires")).burnt_area
    if "threshold.values" in cfg:
        v = np.asarray(cfg.get("threshold.values"))
    else:
        v = default_thresholds(cfg.get("threshold.start", 5.0), cfg.get("threshold.step", 5.0),
                               cfg.get("threshold.count", 40))
    v = v[v < sizes.max()]
    diag = diagnose_threshold(sizes, v)
    rows = list(diag.to_rows())
    cols = ["threshold", "n_exceed", "xi_hat", "xi_se", "mean_excess", "me_lo", "me_hi",
            "p_value"]
    _write_csv(run.file("threshold_diagnostics.csv"), cols + ["config_digest"],
               ([r[c] for c in cols] + [run.digest] for r in rows))
    q = cfg.get("data.u_quantile", 0.95)
    summary = {"config_digest": run.digest, "n_events": int(len(sizes)),
               "quantile_level": q, "suggested_u": float(np.quantile(sizes, q)),
               "errors": {str(k): str(e) for k, e in (diag.errors or {}).items()}}
    _json_dump(summary, run.file("threshold_summary.json"))
    return summary


def cmd_subsample(run):
    from .grid_data import load_pixel_days
    from .subsample import stratified_subsample
    table = load_pixel_days(run.cfg.path("data.pixel_days"), run.season())
    sub = stratified_subsample(table, run.subsample_config())
    _write_csv(run.file("subsample.csv"),
               ["row", "cell_id", "day_index", "count", "p_incl", "weight", "config_digest"],
               ([int(r), int(table.cell_id[r]), int(table.day_index[r]), int(table.count[r]),
                 float(p), float(1 / p), run.digest] for r, p in zip(sub.rows, sub.p_incl)))
    summary = {"config_digest": run.digest, "n_rows": len(table), "n_selected": len(sub),
               "weight_sum": float(sub.weight.sum())}
    _json_dump(summary, run.file("subsample_summary.json"))
    return summary


def _fit_summary(f, run, extra):
    import numpy as np
    fixed = {}
    for name, b in f.layout.blocks.items():
        if b.kind in ("intercept", "linear"):
            fixed[name] = {"mode": float(f.mode[b.start]),
                           "sd": float(f.marginal_sd([b.start])[0])}
    return {"config_digest": run.digest, "hyper": {k: float(v) for k, v in f.hyper.items()},
            "free_hyper": list(f.layout.free_names), "theta": [float(t) for t in f.theta],
            "fixed_effects": fixed, "log_marginal": float(f.log_marginal),
            "converged": bool(f.converged), "optimizer_converged": bool(f.optimizer_converged),
            "identifiable": bool(f.identifiable), "newton_converged": bool(f.newton_converged),
            "n_evals": int(f.n_evals), "accepted_moves": int(f.accepted_moves),
            "spec_digest": f.spec_digest, "data_digest": f.data_digest,
            "n_latent": int(len(f.mode)), **{k: v for k, v in extra.items()
                                            if isinstance(v, (int, float, str, bool))}}


def cmd_fit(run):
    from .inference import fit, save_fit
    from .predict_score import pointwise_loglik, waic
    from .subsample import stratified_subsample
    cfg = run.cfg
    data = run.marked_data()
    spec = run.spec()
    sub = stratified_subsample(data.table, run.subsample_config()) \
        if cfg.get("subsample.enabled", True) else None
    mesh = run.mesh(data.table, spec)
    opt = {k: cfg.get(f"fit.{k}") for k in ("fatol", "xatol", "maxfev") if f"fit.{k}" in cfg}
    f = fit(spec, data, sub, run.priors(), seed=run.seed, mesh=mesh,
            fixed=cfg.section("model.fixed.") or None, init=cfg.section("model.init.") or None,
            **opt)
    if not f.converged:
        log.warning("fit did not converge cleanly (optimizer=%s, identifiable=%s, newton=%s)",
                    f.optimizer_converged, f.identifiable, f.newton_converged)
    n_w = cfg.get("fit.waic_samples", 200)
    w, terms = waic(pointwise_loglik(f, f.model, n_w, run.seed), return_terms=True)
    extra = {"config_digest": run.digest, "fit_digest": cfg.sub_digest(FIT_KEYS),
             "u": float(data.u), "model_label": cfg.get("model.label", f.layout.spec.label or "M1"),
             "waic": w, "lppd": terms["lppd"], "p_waic": terms["p_waic"]}
    save_fit(f, run.file("fit.bin"), extra=extra)
    summary = _fit_summary(f, run, extra)
    _json_dump(summary, run.file("fit_summary.json"))
    return summary


def cmd_simulate(run):
    import numpy as np
    from .grid_data import write_fire_events, write_pixel_days
    from .inference import build_layout
    from .inference.model import _covariates
    from .synthetic import domain_mesh, draw_latent, simulate_data, synthetic_table
    cfg = run.cfg
    seed = run.seed_for("simulate.seed")
    ss_tab, ss_lat, ss_obs = (int(c.generate_state(1)[0])
                              for c in np.random.SeedSequence(seed).spawn(3))
    table = synthetic_table(cfg.get("simulate.nx", 10), cfg.get("simulate.ny", 10),
                            cfg.get("simulate.n_days", 200), cfg.get("simulate.cell_km", 8.0),
                            cfg.get("simulate.years", (2010, 2011)), run.season(),
                            ss_tab,
                            cfg.get("simulate.fwi_mean", 12.0))
    spec = run.spec()
    mesh = domain_mesh(table, cfg.get("mesh.max_edge"), cfg.get("mesh.extension")) \
        if any(e.kind == "spatial" for e in spec.effects) else None
    lay = build_layout(spec, _covariates(table), mesh, run.priors(),
                       fixed=cfg.section("simulate.hyper.") or None, season=table.season)
    hv = lay.values()
    effects = {k: v for k, v in DEFAULT_SIM_EFFECTS.items() if k in lay.blocks}
    effects.update(cfg.section("simulate.effect."))
    x = draw_latent(lay, hv, ss_lat, effects)
    u = float(cfg.get("simulate.u", 79.0))
    data = simulate_data(lay, hv, x, table, u, ss_obs)
    tags = {"config_digest": run.digest}
    write_pixel_days(data.table, run.file("pixel_days.csv"), tags=tags)
    write_fire_events(data.events, run.file("fires.csv"), tags=tags)
    truth = {"config_digest": run.digest, "hyper": {k: float(v) for k, v in hv.items()},
             "effects": {k: float(x[lay.blocks[k].start]) for k in effects},
             "u": u, "n_rows": len(data.table), "n_events": len(data.events),
             "n_extreme": int(data.exceed.sum()),
             "latent": {name: [float(v) for v in x[b.slice]] for name, b in lay.blocks.items()}}
    _json_dump(truth, run.file("truth.json"))
    return {k: v for k, v in truth.items() if k != "latent"}


def _score_one(run, f, data, labels, n, seed, q_size):
    import numpy as np
    from .predict_score import (aggregate, auc, brier, interval_coverage, observed_per_row,
                                observed_totals, predictive_counts, predictive_sizes, scrps)
    u = f.extra.get("u", data.u)
    s_size, s_count = np.random.SeedSequence(seed).spawn(2)
    res, per_obs = {}, {}
    if len(data.events):
        sz = predictive_sizes(f, data.table, data.event_row, n, s_size, u=u)
        sc = -scrps(sz.values, data.burnt_area)
        per_obs["scrps_size"] = sc
        res["scrps_size"] = float(np.mean(sc))
        prob = np.mean(sz.values > q_size, axis=1)
        hit = (data.burnt_area > q_size).astype(int)
        bs = (prob - hit) ** 2
        per_obs["brier_q"] = bs
        res["brier_q"] = brier(prob, hit)
        res["one_minus_auc_q"] = 1 - auc(prob, hit) if 0 < hit.sum() < len(hit) else None
    c, ba = predictive_counts(f, data.table, None, n, s_count, u=u, with_burnt_area=True)
    rows = []
    for kind, smp in (("count", c), ("burnt_area", ba)):
        g = aggregate(smp, labels)
        obs = observed_totals(observed_per_row(data, kind), labels, g.groups)
        cov, inside = interval_coverage(g, obs)
        res[f"iqr_coverage_{kind}"] = cov
        disp = np.ptp(g.values, axis=1) > 0
        sc = np.full(len(obs), np.nan)
        if disp.any():
            sc[disp] = -scrps(g.values[disp], obs[disp])
        res[f"scrps_{kind}"] = float(np.mean(sc[disp])) if disp.any() else None
        res[f"n_degenerate_groups_{kind}"] = int((~disp).sum())
        per_obs[f"scrps_{kind}"] = sc
        qs = g.quantile([0.05, 0.25, 0.5, 0.75, 0.95])
        for k, grp in enumerate(g.groups):
            rows.append([kind, str(grp), float(obs[k])] + [float(qs[j, k]) for j in range(5)]
                        + [int(inside[k])])
    for key in ("waic", "p_waic", "lppd"):
        if key in f.extra:
            res[key] = float(f.extra[key])
    return res, per_obs, rows


def cmd_score(run):
    import numpy as np
    from .errors import DataError
    from .inference.fit import data_digest
    from .predict_score import group_labels, permutation_test
    from .subsample import stratified_subsample
    cfg = run.cfg
    paths = [cfg.resolve(p, "score.fits") for p in cfg.require("score.fits")]
    fits = [run.load_fit(p) for p in paths]
    us = {float(f.extra.get("u", float("nan"))) for f in fits}
    if len(us) > 1:
        raise DataError(f"fits use different thresholds u {sorted(us)}; scores are not comparable")
    if "data.pixel_days" in cfg and "data.fires" in cfg:
        train = run.marked_data(u=fits[0].extra.get("u"))
        sub = stratified_subsample(train.table, run.subsample_config()) \
            if cfg.get("subsample.enabled", True) else None
        dd = data_digest(train, sub)
        for p, f in zip(paths, fits):
            if f.data_digest != dd:
                raise DataError(f"{p}: fit data digest does not match the configured data and "
                                "subsample settings")
    u = fits[0].extra.get("u")
    data = run.marked_data("score.pixel_days", "score.fires", u=u)
    labels = group_labels(data.table, by=cfg.get("score.grouping", "year_month"),
                          cell_groups=run.cell_groups())
    n = cfg.get("score.n", 500)
    seed = run.seed_for("score.seed")
    q_level = cfg.get("score.quantile", 0.9)
    q_size = float(np.quantile(data.burnt_area, q_level)) if len(data.events) else np.inf
    names = []
    scores, per_obs = {}, {}
    for p, f in zip(paths, fits):
        name = f.extra.get("model_label", p.stem)
        base = name
        k = 2
        while name in scores:
            name = f"{base}_{k}"
            k += 1
        names.append(name)
        res, po, rows = _score_one(run, f, data, labels, n, seed, q_size)
        scores[name] = res
        per_obs[name] = po
        _write_csv(run.file(f"groups_{name}.csv"),
                   ["kind", "group", "observed", "q05", "q25", "q50", "q75", "q95",
                    "inside_iqr", "config_digest"], (r + [run.digest] for r in rows))
    perm = {}
    n_perm = cfg.get("score.n_perm", 2000)
    ref = names[0]
    for name in names[1:]:
        out = {}
        for metric, v in per_obs[name].items():
            d = v - per_obs[ref][metric]
            d = d[np.isfinite(d)]
            out[metric] = permutation_test(d, n_perm, seed) if d.size else None
        perm[f"{name}-vs-{ref}"] = out
    result = {"config_digest": run.digest, "orientation": "lower is better",
              "size_quantile": {"level": q_level, "value": q_size}, "n_draws": n,
              "n_events": len(data.events), "n_groups": int(len(np.unique(labels))),
              "scores": scores, "permutation_p_values": perm, "reference": ref,
              "fits": {nm: {"spec_digest": f.spec_digest, "data_digest": f.data_digest,
                            "fit_config_digest": f.extra.get("config_digest")}
                       for nm, f in zip(names, fits)}}
    _json_dump(result, run.file("scores.json"))
    return result


def cmd_excursion(run):
    import numpy as np
    from .predict_score import excursion_function
    cfg = run.cfg
    f = run.load_fit(cfg.path("excursion.fit"))
    fields = cfg.get("excursion.fields") or tuple(
        name for name, b in f.layout.blocks.items() if b.kind == "spatial")
    u = cfg.get("excursion.u", 0.1)
    alpha = cfg.get("excursion.alpha", 0.05)
    n = cfg.get("excursion.n_samples", 10_000)
    seed = run.seed_for("excursion.seed")
    summary = {"config_digest": run.digest, "u": u, "alpha": alpha, "n_samples": n, "fields": {}}
    mesh = f.layout.mesh
    for field in fields:
        r = excursion_function(f, field, u, "both", n, seed)
        b = f.layout.blocks[field]
        spatial = b.kind == "spatial" and mesh is not None
        rows = []
        for i in range(b.dim):
            xy = [float(mesh.nodes[i, 0]), float(mesh.nodes[i, 1])] if spatial else ["", ""]
            rows.append([i] + xy + [float(r.f_plus[i]), float(r.f_minus[i]),
                                    float(r.marginal_plus[i]), float(r.marginal_minus[i]),
                                    run.digest])
        _write_csv(run.file(f"excursion_{field}.csv"),
                   ["node", "x_km", "y_km", "f_plus", "f_minus", "p_plus", "p_minus",
                    "config_digest"], rows)
        summary["fields"][field] = {
            "n_nodes": int(b.dim),
            "n_positive_set": int(len(r.excursion_set(alpha, "+"))),
            "n_negative_set": int(len(r.excursion_set(alpha, "-")))}
    _json_dump(summary, run.file("excursion_summary.json"))
    return summary


HANDLERS = {"diagnose-threshold": cmd_diagnose_threshold, "subsample": cmd_subsample,
            "fit": cmd_fit, "simulate": cmd_simulate, "score": cmd_score,
            "excursion": cmd_excursion}


def _versions():
    import numpy
    import scipy
    from . import __version__
    return {"ember": __version__, "numpy": numpy.__version__, "scipy": scipy.__version__,
            "python": platform.python_version()}


def _setup_logging():
    from .errors import ConfigError
    level = os.environ.get("EMBER_LOG", "error").strip().lower()
    if level not in LOG_LEVELS:
        raise ConfigError(f"EMBER_LOG must be one of {sorted(LOG_LEVELS)}, got {level!r}")
    logging.basicConfig(level=LOG_LEVELS[level], stream=sys.stderr,
                        format="%(levelname)s %(name)s: %(message)s", force=True)


def run(command, cfg, out=None, threads=None):
    """Execute ``command`` under ``cfg``; returns the command's summary dict."""
    from threadpoolctl import threadpool_limits
    if out is None:
        out = cfg.resolve(cfg.get("out", "ember_out"), "out", must_exist=False)
    out = Path(out)
    out.mkdir(parents=True, exist_ok=True)
    r = Run(command, cfg, out)
    t0 = time.perf_counter()
    if threads:
        with threadpool_limits(limits=int(threads)):
            summary = HANDLERS[command](r)
    else:
        summary = HANDLERS[command](r)
    manifest = {"command": command, "config_digest": r.digest, "config": cfg.raw,
                "seeds": r.seeds, "versions": _versions(), "artifacts": sorted(r.artifacts),
                "wall_time_s": round(time.perf_counter() - t0, 3)}
    _json_dump(manifest, out / "manifest.json")
    return summary


def _error_line(exc, command):
    from .errors import FitError
    d = {"error": type(exc).__name__, "message": str(exc), "command": command}
    if isinstance(exc, FitError) and exc.stage:
        d["stage"] = exc.stage
    for attr in ("line", "field"):
        v = getattr(exc, attr, None)
        if v is not None:
            d[attr] = v
    if isinstance(exc, (FileNotFoundError, OSError)) and getattr(exc, "filename", None):
        d["path"] = str(exc.filename)
    return json.dumps(d, sort_keys=True)


def main(argv=None):
    parser = _parser(_Parser)
    command = None
    try:
        args = parser.parse_args(argv)
        command = args.command
        if args.threads is not None and args.threads < 1:
            raise _ArgError("--threads must be >= 1")
        _setup_logging()
        from .config import load_config
        cfg = load_config(args.config)
        if args.seed is not None:
            cfg.set("seed", args.seed)
        if args.invert_fwi_classes:
            cfg.set("subsample.invert_fwi_classes", "true")
        run(command, cfg, args.out, args.threads)
    except SystemExit:
        raise
    except _ArgError as exc:
        print(json.dumps({"error": "UsageError", "message": str(exc), "command": command},
                         sort_keys=True), file=sys.stderr)
        return 1
    except Exception as exc:     # every failure becomes one parsable line
        log.debug("failure", exc_info=True)
        print(_error_line(exc, command), file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
