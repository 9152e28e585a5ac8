"""Command-line surface.

    gridcast <command> [--config FILE] [--set KEY=VALUE ...]

Commands: synth, ingest, decompose, train, predict, evaluate, classify.
Options come from a flat key=value config file with --set overrides
applied on top; each command reads the keys it needs. Failures print one
machine-parseable line `error:<category>: message` to stderr and exit
nonzero. All outputs are deterministic given the seed: numbers are
formatted as shortest round-trip decimals, so repeated runs produce
byte-identical files.

Prediction output reuses the demand-cube text format: the written cube
covers exactly the predicted interval range, with its t0 advanced to the
first predicted interval, which is how evaluate re-aligns it with the
truth cube.
"""

from __future__ import annotations

import argparse
import sys

import numpy as np

from . import datapipe, evalstats, models, synth, training
from .errors import ConfigError, DataError, GridcastError
from .tensor import format_value

_REQUIRED = object()


def load_config(path: str | None, overrides) -> dict:
    """Flat key=value pairs from an optional file plus --set overrides."""
    cfg: dict[str, str] = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as fh:
                lines = fh.read().splitlines()
        except OSError as exc:
            raise ConfigError(f"cannot read config file {path}: {exc}") from exc
        for lineno, raw in enumerate(lines, start=1):
            line = raw.strip()
            if not line or line.startswith("#"):
                continue
            if "=" not in line:
                raise ConfigError(f"{path} line {lineno}: expected key=value, "
                                  f"got {line!r}")
            key, _, value = line.partition("=")
            cfg[key.strip()] = value.strip()
    for item in overrides or ():
        if "=" not in item:
            raise ConfigError(f"--set needs key=value, got {item!r}")
        key, _, value = item.partition("=")
        cfg[key.strip()] = value.strip()
    return cfg


def cfg_get(cfg: dict, key: str, default=_REQUIRED, kind=str):
    if key not in cfg:
        if default is _REQUIRED:
            raise ConfigError(f"missing required config key {key}")
        return default
    raw = cfg[key]
    try:
        return kind(raw)
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"config key {key}: cannot read {raw!r} as "
                          f"{kind.__name__}: {exc}") from exc


def _int_list(raw: str) -> list[int]:
    return [int(part) for part in raw.split(",") if part.strip()]


def _write_text(path: str, text: str) -> None:
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        fh.write(text)


# --- commands ---------------------------------------------------------


def cmd_synth(cfg: dict) -> int:
    out = cfg_get(cfg, "out")
    kwargs = {}
    for name, kind in (("rows", int), ("cols", int), ("days", float), ("dt", float),
                       ("period", int), ("seed", int), ("base_low", float),
                       ("base_high", float), ("amp_high", float), ("kappa", float),
                       ("phase_spread", float), ("trend", float), ("curvature", float),
                       ("noise", str), ("noise_sigma", float),
                       ("noise_fraction", float)):
        if name in cfg:
            kwargs[name] = cfg_get(cfg, name, kind=kind)
    cube, _ = synth.synthesize(synth.SynthConfig(**kwargs))
    datapipe.write_cube(cube, out)
    print(f"wrote {out}: {cube.grid.rows}x{cube.grid.cols} grid, "
          f"{cube.grid.t_count} intervals, total demand {format_value(cube.counts.sum())}")
    return 0


def cmd_ingest(cfg: dict) -> int:
    trips = cfg_get(cfg, "trips")
    out = cfg_get(cfg, "out")
    grid = datapipe.GridSpec(
        lon_min=cfg_get(cfg, "lon_min", kind=float),
        lon_max=cfg_get(cfg, "lon_max", kind=float),
        lat_min=cfg_get(cfg, "lat_min", kind=float),
        lat_max=cfg_get(cfg, "lat_max", kind=float),
        rows=cfg_get(cfg, "rows", kind=int),
        cols=cfg_get(cfg, "cols", kind=int),
        t0=cfg_get(cfg, "t0", kind=float),
        dt=cfg_get(cfg, "dt", kind=float),
        t_count=cfg_get(cfg, "t_count", kind=int),
    )
    records, diagnostics = datapipe.read_trips(trips)
    for message in diagnostics:
        print(f"warning: {trips}: {message}", file=sys.stderr)
    cube, out_of_range = datapipe.ingest(records, grid)
    datapipe.write_cube(cube, out)
    print(f"wrote {out}: {len(records) - out_of_range} records binned, "
          f"{out_of_range} out of range, {len(diagnostics)} bad lines")
    return 0


def cmd_decompose(cfg: dict) -> int:
    cube = datapipe.read_cube(cfg_get(cfg, "cube"))
    candidates = cfg_get(cfg, "candidates", kind=_int_list)
    series = cube.total_series()
    chosen = datapipe.select_period(series, candidates)
    for cand in candidates:
        var = datapipe.decompose(series, cand).residual_variance
        print(f"candidate {cand}: residual_variance {format_value(var)}")
    print(f"selected_period {chosen}")
    out = cfg_get(cfg, "out", default=None)
    if out is not None:
        dec = datapipe.decompose(series, chosen)
        lines = ["t,total,trend,periodic,residual"]
        for t in range(series.size):
            lines.append(",".join([
                str(t), format_value(series[t]), format_value(dec.trend[t]),
                format_value(dec.periodic[t % dec.period]),
                format_value(dec.residual[t]),
            ]))
        _write_text(out, "\n".join(lines) + "\n")
        print(f"wrote {out}")
    return 0


def _train_config(cfg: dict) -> training.TrainConfig:
    kwargs = {}
    for name, kind in (("batch_size", int), ("learning_rate", float),
                       ("adagrad_epsilon", float), ("max_epochs", int),
                       ("patience", int), ("validation_fraction", float),
                       ("seed", int), ("threads", int)):
        if name in cfg:
            kwargs[name] = cfg_get(cfg, name, kind=kind)
    return training.TrainConfig(**kwargs)


def cmd_train(cfg: dict) -> int:
    cube = datapipe.read_cube(cfg_get(cfg, "cube"))
    variant = cfg_get(cfg, "variant")
    checkpoint = cfg_get(cfg, "checkpoint")
    t_recent = cfg_get(cfg, "t_recent", default=10, kind=int)
    t_period = cfg_get(cfg, "t_period", default=10, kind=int)
    period = cfg_get(cfg, "period", kind=int)
    t_lo = cfg_get(cfg, "train_lo", default=0, kind=int)
    t_hi = cfg_get(cfg, "train_hi", default=cube.grid.t_count, kind=int)

    model_cfg = {"rows": cube.grid.rows, "cols": cube.grid.cols,
                 "t_depth": t_recent + t_period}
    for name in ("filters", "lc_channels", "dense_hidden"):
        if name in cfg:
            model_cfg[name] = cfg_get(cfg, name, kind=int)
    if "kernel_depths" in cfg:
        model_cfg["kernel_depths"] = tuple(cfg_get(cfg, "kernel_depths",
                                                   kind=_int_list))
    model = models.build_variant(variant, model_cfg)

    if variant == "lc_st_fcn_diff":
        source, _ = datapipe.difference_transform(cube, period)
        earliest = max(period + 1 + t_recent, 2 * period + 1 + t_period)
        samples = []
        for t in range(max(t_lo, earliest), min(t_hi, cube.grid.t_count)):
            samples.append(datapipe.VolumeSample(
                t, datapipe.volume_input(source, t, t_recent, t_period, period),
                np.ascontiguousarray(source[:, :, t])))
        skipped = (t_hi - t_lo) - len(samples)
    else:
        samples, skipped = datapipe.make_samples(cube, t_recent, t_period,
                                                 period, t_lo, t_hi)
    if not samples:
        raise DataError(f"no trainable samples in [{t_lo}, {t_hi})")
    print(f"training {variant} on {len(samples)} samples "
          f"({skipped} skipped for missing history)")
    report = training.train(model, samples, _train_config(cfg))
    models.write_checkpoint(model, checkpoint)
    print(f"wrote {checkpoint}: stopped at epoch {report.stopped_epoch}, "
          f"best epoch {report.best_epoch}, checksum {report.checksum:08x}")
    report_path = cfg_get(cfg, "report", default=None)
    if report_path is not None:
        _write_text(report_path, training.format_train_report(report))
        print(f"wrote {report_path}")
    return 0


def cmd_predict(cfg: dict) -> int:
    cube = datapipe.read_cube(cfg_get(cfg, "cube"))
    model = models.read_checkpoint(cfg_get(cfg, "checkpoint"))
    out = cfg_get(cfg, "out")
    t_recent = cfg_get(cfg, "t_recent", default=10, kind=int)
    t_period = cfg_get(cfg, "t_period", default=10, kind=int)
    period = cfg_get(cfg, "period", kind=int)
    t_lo = cfg_get(cfg, "predict_lo", default=0, kind=int)
    t_hi = cfg_get(cfg, "predict_hi", default=cube.grid.t_count, kind=int)
    ts, preds = models.predict_cube(model, cube, t_lo, t_hi, t_recent,
                                    t_period, period)
    if ts.size == 0:
        raise DataError(f"no predictable intervals in [{t_lo}, {t_hi})")
    g = cube.grid
    pred_grid = datapipe.GridSpec(g.lon_min, g.lon_max, g.lat_min, g.lat_max,
                                  g.rows, g.cols, g.t0 + float(ts[0]) * g.dt,
                                  g.dt, int(ts.size))
    pred_cube = datapipe.DemandCube(pred_grid, np.moveaxis(preds, 0, 2))
    datapipe.write_cube(pred_cube, out)
    print(f"wrote {out}: predictions for intervals [{ts[0]}, {ts[-1] + 1})")
    return 0


def cmd_evaluate(cfg: dict) -> int:
    cube = datapipe.read_cube(cfg_get(cfg, "cube"))
    pred_cube = datapipe.read_cube(cfg_get(cfg, "predictions"))
    train_lo = cfg_get(cfg, "train_lo", kind=int)
    train_hi = cfg_get(cfg, "train_hi", kind=int)
    c = cfg_get(cfg, "c", default=1.0, kind=float)
    h = cfg_get(cfg, "h", default=20, kind=int)

    g, pg = cube.grid, pred_cube.grid
    offset = (pg.t0 - g.t0) / g.dt
    if abs(pg.dt - g.dt) > 1e-9 or abs(offset - round(offset)) > 1e-9:
        raise DataError("prediction cube intervals do not align with the truth cube")
    offset = int(round(offset))
    if offset < 0 or offset + pg.t_count > g.t_count:
        raise DataError(f"prediction range [{offset}, {offset + pg.t_count}) is "
                        f"outside the truth cube")
    ts = np.arange(offset, offset + pg.t_count, dtype=np.int64)
    preds = np.moveaxis(pred_cube.counts, 2, 0)
    report = evalstats.evaluate_predictions(cube, ts, preds, train_lo, train_hi,
                                            c=c, h=h)
    text = evalstats.format_eval_report(report)
    out = cfg_get(cfg, "out", default=None)
    if out is not None:
        _write_text(out, text)
        print(f"wrote {out}")
    else:
        sys.stdout.write(text)

    lorenz_out = cfg_get(cfg, "lorenz_out", default=None)
    if lorenz_out is not None:
        totals = cube.counts[:, :, train_lo:train_hi].sum(axis=2).ravel()
        shares = np.sort(totals) / totals.sum()
        lorenz = np.concatenate([[0.0], np.cumsum(shares)])
        lines = ["fraction,cumulative_share"]
        for k, y in enumerate(lorenz):
            lines.append(f"{format_value(k / (lorenz.size - 1))},{format_value(y)}")
        _write_text(lorenz_out, "\n".join(lines) + "\n")
        print(f"wrote {lorenz_out}")

    cma_out = cfg_get(cfg, "cma_out", default=None)
    if cma_out is not None:
        truth = np.moveaxis(cube.counts[:, :, ts], 2, 0)
        err = preds - truth
        step_rmse = np.sqrt((err * err).mean(axis=(1, 2)))
        step_mape = (np.abs(err) / (truth + c)).mean(axis=(1, 2))
        denom = np.arange(1, ts.size + 1)
        lines = ["t,rmse_cma,mape_cma"]
        rmse_cma = np.cumsum(step_rmse) / denom
        mape_cma = np.cumsum(step_mape) / denom
        for k in range(ts.size):
            lines.append(f"{int(ts[k])},{format_value(rmse_cma[k])},"
                         f"{format_value(mape_cma[k])}")
        _write_text(cma_out, "\n".join(lines) + "\n")
        print(f"wrote {cma_out}")
    return 0


def cmd_classify(cfg: dict) -> int:
    cube = datapipe.read_cube(cfg_get(cfg, "cube"))
    t_lo = cfg_get(cfg, "t_lo", default=0, kind=int)
    t_hi = cfg_get(cfg, "t_hi", default=cube.grid.t_count, kind=int)
    h = cfg_get(cfg, "h", default=20, kind=int)
    alpha = cfg_get(cfg, "alpha", default=0.05, kind=float)
    pvalues = evalstats.region_pvalues(cube, t_lo, t_hi, h)
    partition = evalstats.classify_regions(cube, t_lo, t_hi, h, alpha)
    degenerate = set(partition.degenerate)
    totals = cube.counts[:, :, t_lo:t_hi].sum(axis=2)
    lines = ["i,j,total,p,label,degenerate"]
    for (i, j) in sorted(pvalues):
        lines.append(",".join([
            str(i), str(j), format_value(totals[i, j]),
            format_value(pvalues[(i, j)]), partition.label((i, j)),
            "1" if (i, j) in degenerate else "0",
        ]))
    table = "\n".join(lines) + "\n"
    out = cfg_get(cfg, "out", default=None)
    if out is not None:
        _write_text(out, table)
        print(f"wrote {out}")
    else:
        sys.stdout.write(table)
    g1_mass = sum(totals[r] for r in partition.g1)
    total_mass = float(totals.sum())
    share = g1_mass / total_mass if total_mass > 0 else 0.0
    print(f"G1 {len(partition.g1)} regions ({format_value(share)} of demand), "
          f"G2 {len(partition.g2)} regions, {len(partition.degenerate)} degenerate")
    return 0


COMMANDS = {
    "synth": cmd_synth,
    "ingest": cmd_ingest,
    "decompose": cmd_decompose,
    "train": cmd_train,
    "predict": cmd_predict,
    "evaluate": cmd_evaluate,
    "classify": cmd_classify,
}


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(
        prog="gridcast",
        description="Grid demand forecasting pipeline: synthesize or ingest "
                    "demand cubes, pick the period, train forecasters, "
                    "predict, and evaluate.")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None,
                       help="key=value config file")
        p.add_argument("--set", action="append", default=[], dest="overrides",
                       metavar="KEY=VALUE", help="override one config key")
    args = parser.parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides)
        return COMMANDS[args.command](cfg)
    except GridcastError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 1


def entrypoint() -> None:
    sys.exit(main())
