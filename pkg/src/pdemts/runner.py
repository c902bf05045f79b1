"""Experiment orchestration: config parsing, phase pipelines, reports.

A report directory is self-describing: resolved_config.txt reruns the
experiment bitwise, predictions.csv regenerates every number in
metrics.csv, manifest.txt records data decisions, and figures render the
same series the CSVs hold.
"""

import os
import time
from dataclasses import dataclass, fields

import numpy as np

from . import diffops, discover, frame, metrics as metmod, net, pinn, plotting, presets
from .bayes import core as bcore
from .bayes import models as bmodels
from .errors import ConfigError, DataError, StageError
from .expr import Constant, PdeSpec, Var, read_pde_file, write_pde_file
from .featlib import FunctionLibrary, LibraryConfig, build_theta
from .sparse import (
    assemble_pde,
    cross_validate_lambda,
    stlsq,
    validate_pde,
)
from .symreg import GpConfig, evolve, simplify_size, write_hall_of_fame

EXTRACT_METHODS = ("sindy", "lasso", "blasso", "sr", "cnn", "tcn1", "tcn2")
PREDICT_METHODS = ("nn", "pinn", "blr", "pi_blr", "bnn", "b_pinn")

TARGET_COLUMNS = [
    "Global_active_power", "Global_reactive_power", "Voltage",
    "Sub_metering_1", "Sub_metering_2", "Sub_metering_3",
]


@dataclass
class RunConfig:
    dataset: str = ""
    phase: str = "extract"
    method: str = "tcn1"
    lag: int = 30
    seed: int = 0
    corr_threshold: float = 0.9999
    train_size: int = 6000
    val_size: int = 500
    test_size: int = 500
    offset: int = 0
    epochs: int = -1  # -1: 30 for extraction, 50 for prediction
    batch_size: int = 64
    lr: float = 1e-3
    patience: int = 0  # 0: fixed-epoch training
    max_epochs: int = 200  # cap when patience > 0
    select_r2: float = 0.8
    gate_r2: float = 0.5
    corr_filter: float = 0.5
    poly_degree: int = 3
    harvest_rows: int = 2000
    sindy_degree: int = 2
    stlsq_threshold: float = 0.05
    cv_folds: int = 5
    sr_population: int = 500
    sr_generations: int = 30
    sr_rows: int = 300
    sr_use_states: int = 1
    samples: int = 230  # Bayesian training subset; 0 = all rows
    tune: int = 200
    draws: int = 500
    chains: int = 1
    target_accept: float = 0.9
    max_treedepth: int = 10
    sigma_pde: float = 0.1
    physics_weight: float = 1.0
    map_steps: int = 300
    advi_steps: int = 500
    blasso_rows: int = 400
    hidden: int = 10
    hidden_layers: int = 2
    pdes: str = ""
    fig_format: str = "png"

    def resolved_epochs(self):
        if self.epochs >= 0:
            return self.epochs
        return presets.EXTRACTION_EPOCHS if self.phase == "extract" else presets.PREDICTION_EPOCHS

    def validate(self):
        if not self.dataset:
            raise ConfigError("config key 'dataset' is required")
        if self.phase not in ("extract", "predict"):
            raise ConfigError(f"phase must be extract or predict, got {self.phase!r}")
        valid = EXTRACT_METHODS if self.phase == "extract" else PREDICT_METHODS
        if self.method not in valid:
            raise ConfigError(
                f"unknown method {self.method!r} for phase {self.phase}; "
                f"valid: {', '.join(valid)}"
            )
        if self.fig_format not in ("png", "svg", "none"):
            raise ConfigError("fig_format must be png, svg, or none")
        return self


_FIELD_TYPES = {f.name: f.type for f in fields(RunConfig)}


def parse_config(path_or_text, overrides=None):
    """Read a `key = value` file; unknown keys are rejected."""
    if os.path.exists(path_or_text):
        with open(path_or_text) as fh:
            text = fh.read()
    else:
        text = path_or_text
    cfg = RunConfig()
    for lineno, line in enumerate(text.splitlines(), start=1):
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"config line {lineno}: expected 'key = value'")
        key, _, value = line.partition("=")
        key, value = key.strip(), value.strip()
        _set_key(cfg, key, value, where=f"line {lineno}")
    for key, value in (overrides or {}).items():
        _set_key(cfg, key, value, where="override")
    return cfg.validate()


def _set_key(cfg, key, value, where):
    if key not in _FIELD_TYPES:
        raise ConfigError(f"unknown config key {key!r} ({where})")
    kind = _FIELD_TYPES[key]
    try:
        if kind in ("int", int):
            setattr(cfg, key, int(value))
        elif kind in ("float", float):
            setattr(cfg, key, float(value))
        else:
            setattr(cfg, key, str(value))
    except ValueError:
        raise ConfigError(f"config key {key!r}: cannot parse {value!r} ({where})") from None


def write_resolved_config(cfg, path):
    with open(path, "w") as fh:
        for f in fields(RunConfig):
            fh.write(f"{f.name} = {getattr(cfg, f.name)}\n")


# ------------------------------------------------------------------ ingest

@dataclass
class Ingested:
    norm_frame: frame.TimeSeriesFrame
    stats: frame.NormalizationStats
    windows: frame.LagWindowSet
    splits: dict  # name -> LagWindowSet
    split_spec: frame.SplitSpec
    manifest: dict
    input_names: list
    target_names: list


def ingest_pipeline(cfg):
    """parse -> elapsed hours -> interpolate -> screen -> normalize ->
    windows -> chronological splits. Normalization stats come from the
    frame rows the training windows cover."""
    raw = frame.parse_power_csv(cfg.dataset)
    manifest = {"dataset": cfg.dataset, "rows": raw.n,
                "missing_fraction": f"{raw.missing.mean():.6f}"}
    f = frame.compute_elapsed_hours(raw)
    f, fill = frame.interpolate_missing(f)
    screen = frame.correlation_screen(f, cfg.corr_threshold)
    manifest["screen_pairs"] = "; ".join(
        f"{a}~{b}:r={r:.12f}" for a, b, r in screen.pairs) or "none"
    manifest["dropped_columns"] = ", ".join(screen.dropped) or "none"
    f = f.drop_columns(screen.dropped)

    energy, _ = frame.derive_active_energy(f)
    manifest["active_energy_mean"] = f"{float(np.mean(energy)):.6f}"
    manifest["active_energy_first"] = f"{float(energy[0]):.6f}"

    inputs = [frame.ELAPSED_COLUMN] + [c for c in TARGET_COLUMNS if c in f.names]
    targets = [c for c in TARGET_COLUMNS if c in f.names]

    spec = frame.SplitSpec.from_sizes(cfg.train_size, cfg.val_size, cfg.test_size,
                                      offset=cfg.offset)
    train_rows = slice(spec.train[0], spec.train[1] + cfg.lag)
    norm, stats = frame.normalize(f, fit_rows=train_rows)
    windows = frame.make_lag_windows(norm, cfg.lag, inputs, targets)
    tr, va, te = frame.split(windows, spec)
    manifest.update({
        "lag": cfg.lag, "seed": cfg.seed,
        "inputs": ", ".join(inputs), "targets": ", ".join(targets),
        "split_train": f"{spec.train[0]}:{spec.train[1]}",
        "split_validation": f"{spec.validation[0]}:{spec.validation[1]}",
        "split_test": f"{spec.test[0]}:{spec.test[1]}",
        "normalization": "z-score, population std, fitted on training rows",
        "fill_fractions": "; ".join(f"{k}={v:.6f}" for k, v in fill.items()),
    })
    return Ingested(
        norm_frame=norm, stats=stats, windows=windows,
        splits={"train": tr, "validation": va, "test": te},
        split_spec=spec, manifest=manifest,
        input_names=inputs, target_names=targets,
    )


def write_manifest(manifest, path):
    with open(path, "w") as fh:
        for k, v in manifest.items():
            fh.write(f"{k} = {v}\n")


# ------------------------------------------------------- shared method data

def _pair_columns(split_set):
    """Symbol -> column map for the shift-by-lag pairs of one split:
    states X1..Xd from the window start row, derivative estimates
    dY<j>_dX1 from forward differences against elapsed time."""
    X0 = split_set.X[:, 0, :]
    cols = {f"X{i + 1}": X0[:, i] for i in range(X0.shape[1])}
    for j in range(split_set.Y.shape[1]):
        cols[f"dY{j + 1}_dX1"] = diffops.forward_difference(split_set.Y[:, j], X0[:, 0])
    return cols


def _identity_library(cols, labels):
    columns = np.column_stack([np.ones(len(next(iter(cols.values()))))] +
                              [cols[k] for k in labels])
    exprs = [Constant(1.0)] + [Var(k) for k in labels]
    return FunctionLibrary(columns=columns, exprs=exprs,
                           config=LibraryConfig(degree=1, interactions=False, trig=False))


def _metric_rows_from_pdes(pdes, selected, phase, method):
    rows = []
    for pde in pdes:
        m = pde.fit_metrics
        rows.append({
            "phase": phase, "method": method, "variable": pde.lhs_symbol,
            "MSE": m.get("mse", float("nan")), "MAE": m.get("mae", float("nan")),
            "R2": m.get("r2", float("nan")),
            "selected": pde.lhs_symbol in selected,
        })
    return rows


def _write_metric_rows(rows, path):
    with open(path, "w") as fh:
        fh.write("phase,method,variable,MSE,MAE,R2\n")
        for r in rows:
            fh.write(
                f"{r['phase']},{r['method']},{r['variable']},"
                f"{metmod.format_value(r['MSE'])},{metmod.format_value(r['MAE'])},"
                f"{metmod.format_value(r['R2'])}\n"
            )


def _write_predictions_csv(path, index, series):
    """series: ordered dict of column name -> 1-D array."""
    keys = list(series)
    with open(path, "w") as fh:
        fh.write("index," + ",".join(keys) + "\n")
        for r, idx in enumerate(index):
            fh.write(str(int(idx)) + "," + ",".join(repr(float(series[k][r])) for k in keys) + "\n")


def _read_predictions_csv(path):
    with open(path) as fh:
        header = fh.readline().strip().split(",")
        data = [[] for _ in header]
        for line in fh:
            for k, tok in enumerate(line.strip().split(",")):
                data[k].append(float(tok))
    return header, [np.asarray(col) for col in data]


# ----------------------------------------------------------- extract phase

def _extract_with_network(cfg, ing, outdir):
    T = cfg.lag
    d = len(ing.input_names)
    p = len(ing.target_names)
    spec = presets.extraction_preset(cfg.method, (T, d), p)
    tcfg = net.TrainConfig(
        lr=cfg.lr, epochs=cfg.resolved_epochs(), batch_size=cfg.batch_size,
        patience=cfg.patience or None, seed=cfg.seed,
    )
    tr, va, te = (ing.splits[k] for k in ("train", "validation", "test"))
    trained = net.train(spec, (tr.X, tr.Y), (va.X, va.Y), tcfg)
    net.write_history_csv(trained.history, os.path.join(outdir, "history.csv"))
    net.save_checkpoint(trained, os.path.join(outdir, "checkpoint.npz"))

    dcfg = discover.DiscoveryConfig(
        corr_threshold=cfg.corr_filter, degree=cfg.poly_degree,
        select_r2=cfg.select_r2, gate_r2=cfg.gate_r2,
        max_rows=cfg.harvest_rows or None,
    )
    report = discover.run_discovery(trained, tr, va, te, dcfg)
    report.persist(outdir)

    # metrics.csv: surrogate state rows (test split) + constraint rows (val)
    pred_test = trained.predict(te.X)
    state_metrics = metmod.compute_metrics(te.Y, pred_test, phase="extract", method=cfg.method)
    rows = [{
        "phase": "extract", "method": cfg.method, "variable": v,
        "MSE": state_metrics.mse[k], "MAE": state_metrics.mae[k], "R2": state_metrics.r2[k],
    } for k, v in enumerate(state_metrics.variables)]
    rows += _metric_rows_from_pdes(report.pdes, report.selected, "extract", cfg.method)
    _write_metric_rows(rows, os.path.join(outdir, "metrics.csv"))

    h_val = discover.harvest(trained, va, dcfg.reduction, dcfg.max_rows)
    cols_val = h_val.columns()
    series = {}
    for pde in report.pdes:
        lhs = pde.lhs_symbol
        from .expr import evaluate_batch

        series[f"truth_{lhs}"] = cols_val[lhs]
        series[f"pred_{lhs}"] = evaluate_batch(pde.rhs, cols_val, n=len(cols_val[lhs]))
    index = np.arange(ing.split_spec.validation[0],
                      ing.split_spec.validation[0] + len(h_val.D))
    _write_predictions_csv(os.path.join(outdir, "predictions.csv"), index, series)
    if cfg.fig_format != "none":
        labels = [pde.lhs_symbol for pde in report.pdes]
        truth = np.column_stack([series[f"truth_{l}"] for l in labels])
        pred = np.column_stack([series[f"pred_{l}"] for l in labels])
        plotting.prediction_figure(index, truth, pred, labels,
                                   os.path.join(outdir, f"predictions.{cfg.fig_format}"))
        plotting.history_figure(trained.history,
                                os.path.join(outdir, f"history.{cfg.fig_format}"))
    return report.pdes


def _extract_regression(cfg, ing, outdir):
    """sindy / lasso / blasso / sr share the pair-column data layout."""
    tr_cols = _pair_columns(ing.splits["train"])
    va_cols = _pair_columns(ing.splits["validation"])
    p = len(ing.target_names)
    d = len(ing.input_names)
    state_syms = [f"X{i + 1}" for i in range(d)]
    pdes, extras = [], {}

    for j in range(1, p + 1):
        lhs = f"dY{j}_dX1"
        b_tr = tr_cols[lhs]
        if cfg.method == "sindy":
            lib_cfg = LibraryConfig(degree=cfg.sindy_degree, interactions=True, trig=False)
            A_tr = build_theta(np.column_stack([tr_cols[s] for s in state_syms]),
                               state_syms, lib_cfg)
            fit = stlsq(A_tr.columns, b_tr, threshold=cfg.stlsq_threshold)
            pde = assemble_pde(fit, A_tr, lhs=(j, 1))
        elif cfg.method in ("lasso", "blasso"):
            labels = state_syms + [f"dY{m}_dX1" for m in range(1, p + 1) if m != j]
            lib = _identity_library(tr_cols, labels)
            if cfg.method == "lasso":
                cv = cross_validate_lambda(lib.columns, b_tr, k=cfg.cv_folds)
                pde = assemble_pde(cv.final_fit, lib, lhs=(j, 1))
                extras.setdefault("lambda", {})[lhs] = cv.best_lambda
                if cfg.fig_format != "none":
                    plotting.lambda_path_figure(
                        cv, os.path.join(outdir, f"cv_{lhs}.{cfg.fig_format}"))
            else:
                rows = min(cfg.blasso_rows or len(b_tr), len(b_tr))
                A = lib.columns[:rows]
                y = b_tr[:rows]
                # sample on standardized columns (sane geometry), then map
                # the coefficient draws back to the raw scale; HDI-based
                # selection commutes with per-coordinate linear maps
                col_scale = A.std(axis=0)
                col_scale[col_scale == 0.0] = 1.0
                y_scale = y.std() or 1.0
                spec = bmodels.BlassoSpec(design=A / col_scale, y=y / y_scale,
                                          column_names=lib.names)
                model = bmodels.build_blasso(spec)
                # the Laplace-Gamma hierarchy is a funnel; cap trajectory
                # length here or chains burn hours at full depth
                scfg = bcore.SamplerConfig(
                    chains=cfg.chains, tune=cfg.tune, draws=cfg.draws,
                    target_accept=cfg.target_accept,
                    max_treedepth=min(cfg.max_treedepth, 6),
                    seed=cfg.seed + j,
                )
                samples = bcore.nuts_sample(model, scfg, np.zeros(model.dim))
                extras.setdefault("diagnostics", {})[lhs] = samples.diagnostics_text()
                m_cols = A.shape[1]
                samples.samples[:, :, :m_cols] *= y_scale / col_scale
                pde = bmodels.select_terms_blasso(samples, lib, lhs=(j, 1))
        elif cfg.method == "sr":
            labels = [f"dY{m}_dX1" for m in range(1, p + 1) if m != j]
            if cfg.sr_use_states:
                labels = state_syms + labels
            rows = min(cfg.sr_rows or len(b_tr), len(b_tr))
            feats = np.column_stack([tr_cols[k][:rows] for k in labels])
            gp_cfg = GpConfig(population_size=cfg.sr_population,
                              generations=cfg.sr_generations, seed=cfg.seed + j)
            best, hall = evolve(feats, b_tr[:rows], gp_cfg, feature_names=labels)
            best = simplify_size(best)
            write_hall_of_fame(hall, os.path.join(outdir, f"hall_of_fame_{lhs}.txt"))
            pde = PdeSpec(lhs=(j, 1), rhs=best.expr)
        else:
            raise ConfigError(f"unhandled extraction method {cfg.method}")

        validate_pde(pde, {**va_cols})
        if not pde.trivial and pde.fit_metrics.get("r2", -np.inf) >= cfg.select_r2:
            pde.mask_bit = 1
        pdes.append(pde)

    selected = [p_.lhs_symbol for p_ in pdes if p_.mask_bit == 1]
    write_pde_file(pdes, os.path.join(outdir, "pdes.txt"))
    rows = _metric_rows_from_pdes(pdes, selected, "extract", cfg.method)
    _write_metric_rows(rows, os.path.join(outdir, "metrics.csv"))
    if "diagnostics" in extras:
        with open(os.path.join(outdir, "diagnostics.txt"), "w") as fh:
            for lhs, text in extras["diagnostics"].items():
                fh.write(f"[{lhs}]\n{text}\n")

    series = {}
    from .expr import evaluate_batch

    for pde in pdes:
        lhs = pde.lhs_symbol
        series[f"truth_{lhs}"] = va_cols[lhs]
        series[f"pred_{lhs}"] = evaluate_batch(pde.rhs, va_cols, n=len(va_cols[lhs]))
    index = np.arange(ing.split_spec.validation[0],
                      ing.split_spec.validation[0] + len(va_cols["X1"]))
    _write_predictions_csv(os.path.join(outdir, "predictions.csv"), index, series)
    if cfg.fig_format != "none":
        labels = [pde.lhs_symbol for pde in pdes]
        truth = np.column_stack([series[f"truth_{l}"] for l in labels])
        pred = np.column_stack([series[f"pred_{l}"] for l in labels])
        plotting.prediction_figure(index, truth, pred, labels,
                                   os.path.join(outdir, f"predictions.{cfg.fig_format}"))
    return pdes


# ----------------------------------------------------------- predict phase

def _load_pdes(cfg):
    if not cfg.pdes:
        return []
    pdes = read_pde_file(cfg.pdes)
    return [p for p in pdes if p.mask_bit == 1]


def _predict_network(cfg, ing, outdir):
    T, d, p = cfg.lag, len(ing.input_names), len(ing.target_names)
    spec = presets.tcn_prediction((T, d), p)
    pdes = _load_pdes(cfg) if cfg.method == "pinn" else []
    if cfg.method == "pinn" and not pdes:
        raise ConfigError("pinn needs a 'pdes' file with at least one mask=1 constraint")
    epochs = cfg.resolved_epochs()
    patience = cfg.patience or None
    tcfg = net.TrainConfig(
        lr=cfg.lr, epochs=cfg.max_epochs if patience else epochs,
        batch_size=cfg.batch_size, patience=patience, seed=cfg.seed,
    )
    pcfg = pinn.PinnConfig(spec=spec, train=tcfg, pdes=pdes,
                           physics_weight=cfg.physics_weight)
    tr, va, te = (ing.splits[k] for k in ("train", "validation", "test"))
    trained = pinn.train_pinn(pcfg, (tr.X, tr.Y), (va.X, va.Y))
    net.write_history_csv(trained.history, os.path.join(outdir, "history.csv"))
    net.save_checkpoint(trained, os.path.join(outdir, "checkpoint.npz"))
    pred = trained.predict(te.X)
    return pred, None, None, trained.history


def _bayes_subset(cfg, split_set):
    n = split_set.n
    take = n if cfg.samples in (0, None) else min(cfg.samples, n)
    # the most recent rows sit closest to the forecast window
    return split_set.rows(n - take, n)


def _predict_blr(cfg, ing, outdir):
    tr = _bayes_subset(cfg, ing.splits["train"])
    te = ing.splits["test"]
    X_tr, Y_tr = tr.X[:, 0, :], tr.Y
    X_te = te.X[:, 0, :]
    pdes = _load_pdes(cfg) if cfg.method == "pi_blr" else []
    if cfg.method == "pi_blr" and not pdes:
        raise ConfigError("pi_blr needs a 'pdes' file with at least one mask=1 constraint")
    spec = bmodels.BlrSpec(X=X_tr, Y=Y_tr, sigma_pde=cfg.sigma_pde)
    model = bmodels.build_blr(spec)
    model = bmodels.add_pde_potential(model, pdes, cfg.sigma_pde)
    init = bcore.map_estimate(model, np.zeros(model.dim), steps=cfg.map_steps).theta
    scfg = bcore.SamplerConfig(chains=cfg.chains, tune=cfg.tune, draws=cfg.draws,
                               target_accept=cfg.target_accept,
                               max_treedepth=cfg.max_treedepth, seed=cfg.seed)
    samples = bcore.nuts_sample(model, scfg, init)
    samples.write_csv(os.path.join(outdir, "posterior.csv"))
    with open(os.path.join(outdir, "diagnostics.txt"), "w") as fh:
        fh.write(samples.diagnostics_text())
    mean, lo, hi = bmodels.posterior_predict(model, samples, X_te, max_draws=200)
    return mean, lo, hi, None


def _predict_bnn(cfg, ing, outdir):
    tr = _bayes_subset(cfg, ing.splits["train"])
    te = ing.splits["test"]
    pdes = _load_pdes(cfg) if cfg.method == "b_pinn" else []
    if cfg.method == "b_pinn" and not pdes:
        raise ConfigError("b_pinn needs a 'pdes' file with at least one mask=1 constraint")
    spec = bmodels.BpinnSpec(X=tr.X, Y=tr.Y, hidden=(cfg.hidden,) * cfg.hidden_layers,
                             sigma_pde=cfg.sigma_pde)
    model = bmodels.build_bpinn(spec)
    model = bmodels.add_pde_potential(model, pdes, cfg.sigma_pde)
    vi = bcore.advi_fit(model, steps=cfg.advi_steps, mc_samples=4, seed=cfg.seed)
    scfg = bcore.SamplerConfig(chains=cfg.chains, tune=cfg.tune, draws=cfg.draws,
                               target_accept=cfg.target_accept,
                               max_treedepth=cfg.max_treedepth, seed=cfg.seed)
    samples = bcore.nuts_sample(model, scfg, vi.mean)
    samples.write_csv(os.path.join(outdir, "posterior.csv"))
    with open(os.path.join(outdir, "diagnostics.txt"), "w") as fh:
        fh.write(samples.diagnostics_text())
    mean, lo, hi = bmodels.posterior_predict(model, samples, te.X, max_draws=100)
    return mean, lo, hi, None


def _run_predict(cfg, ing, outdir):
    te = ing.splits["test"]
    if cfg.method in ("nn", "pinn"):
        pred, lo, hi, history = _predict_network(cfg, ing, outdir)
    elif cfg.method in ("blr", "pi_blr"):
        pred, lo, hi, history = _predict_blr(cfg, ing, outdir)
    else:
        pred, lo, hi, history = _predict_bnn(cfg, ing, outdir)

    m = metmod.compute_metrics(te.Y, pred, phase="predict", method=cfg.method)
    rows = [{
        "phase": "predict", "method": cfg.method, "variable": v,
        "MSE": m.mse[k], "MAE": m.mae[k], "R2": m.r2[k],
    } for k, v in enumerate(m.variables)]
    _write_metric_rows(rows, os.path.join(outdir, "metrics.csv"))

    index = np.arange(ing.split_spec.test[0], ing.split_spec.test[0] + te.n)
    series = {}
    for k, v in enumerate(m.variables):
        series[f"truth_{v}"] = te.Y[:, k]
        series[f"pred_{v}"] = pred[:, k]
        if lo is not None:
            series[f"lo_{v}"] = lo[:, k]
            series[f"hi_{v}"] = hi[:, k]
    _write_predictions_csv(os.path.join(outdir, "predictions.csv"), index, series)
    if cfg.fig_format != "none":
        plotting.prediction_figure(
            index, te.Y, pred, m.variables,
            os.path.join(outdir, f"predictions.{cfg.fig_format}"), lower=lo, upper=hi)
        if history:
            plotting.history_figure(history, os.path.join(outdir, f"history.{cfg.fig_format}"))
    return m


# ------------------------------------------------------------------ driver

def run_experiment(cfg, outdir):
    cfg.validate()
    os.makedirs(outdir, exist_ok=True)
    timings = []
    t0 = time.perf_counter()
    try:
        ing = ingest_pipeline(cfg)
    except Exception as e:
        raise StageError("ingest", str(e)) from e
    timings.append(("ingest", time.perf_counter() - t0))

    ing.manifest["method"] = cfg.method
    ing.manifest["phase"] = cfg.phase
    write_manifest(ing.manifest, os.path.join(outdir, "manifest.txt"))
    ing.stats.write_csv(os.path.join(outdir, "normalization_stats.csv"))
    write_resolved_config(cfg, os.path.join(outdir, "resolved_config.txt"))

    t0 = time.perf_counter()
    try:
        if cfg.phase == "extract":
            if cfg.method in ("cnn", "tcn1", "tcn2"):
                _extract_with_network(cfg, ing, outdir)
            else:
                _extract_regression(cfg, ing, outdir)
        else:
            _run_predict(cfg, ing, outdir)
    except (ConfigError, DataError):
        raise
    except StageError:
        raise
    except Exception as e:
        raise StageError(cfg.phase, f"{type(e).__name__}: {e}") from e
    timings.append((cfg.phase, time.perf_counter() - t0))

    with open(os.path.join(outdir, "timing.txt"), "w") as fh:
        for stage, dt in timings:
            fh.write(f"{stage} = {dt:.3f} s\n")
    return outdir


def verify_report(report_dir, tol=1e-12):
    """Recompute metrics.csv from predictions.csv; reports are
    self-verifying. Returns the list of (variable, metric, file, recomputed)
    mismatches (empty = verified)."""
    header, cols = _read_predictions_csv(os.path.join(report_dir, "predictions.csv"))
    by_name = dict(zip(header, cols))
    variables = [h[len("truth_"):] for h in header if h.startswith("truth_")]
    stored = metmod.read_metrics_csv(os.path.join(report_dir, "metrics.csv"))
    stored_by_var = {r["variable"]: r for r in stored}
    mismatches = []
    for v in variables:
        truth, pred = by_name[f"truth_{v}"], by_name[f"pred_{v}"]
        mse = float(np.mean((truth - pred) ** 2))
        mae = float(np.mean(np.abs(truth - pred)))
        r2 = metmod.r_squared(truth, pred)
        if v not in stored_by_var:
            mismatches.append((v, "missing", "", ""))
            continue
        row = stored_by_var[v]
        for name, val in (("MSE", mse), ("MAE", mae), ("R2", r2)):
            if metmod.format_value(val) != row[name]:
                mismatches.append((v, name, row[name], metmod.format_value(val)))
    return mismatches


_SPLIT_KEYS = ("dataset", "phase", "lag", "train_size", "val_size", "test_size", "offset")


def read_resolved_config(report_dir):
    return parse_config(os.path.join(report_dir, "resolved_config.txt"))


def compare_runs(report_dirs, out_path):
    """Side-by-side metric table across reports of the same split."""
    if len(report_dirs) < 2:
        raise ConfigError("compare needs at least two report directories")
    configs = [read_resolved_config(d) for d in report_dirs]
    base = configs[0]
    for d, c in zip(report_dirs[1:], configs[1:]):
        for key in _SPLIT_KEYS:
            if getattr(c, key) != getattr(base, key):
                raise DataError(
                    f"report {d} differs on {key}: {getattr(c, key)} vs {getattr(base, key)}"
                )
    tables = []
    for d in report_dirs:
        rows = metmod.read_metrics_csv(os.path.join(d, "metrics.csv"))
        tables.append({r["variable"]: r for r in rows})
    methods = [c.method for c in configs]
    variables = [v for v in tables[0] if all(v in t for t in tables)]
    with open(out_path, "w") as fh:
        head = ["variable", "metric"] + methods
        head += [f"delta_{m}" for m in methods[1:]] + ["best"]
        fh.write(",".join(head) + "\n")
        for v in variables:
            for metric in ("MSE", "MAE", "R2"):
                vals = [float(t[v][metric]) for t in tables]
                best = max(range(len(vals)), key=lambda i: vals[i]) if metric == "R2" \
                    else min(range(len(vals)), key=lambda i: vals[i])
                deltas = [vals[i] - vals[0] for i in range(1, len(vals))]
                fh.write(
                    ",".join([v, metric] + [metmod.format_value(x) for x in vals]
                             + [metmod.format_value(x) for x in deltas]
                             + [methods[best]]) + "\n"
                )
    return out_path
