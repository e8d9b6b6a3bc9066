"""Command-line surface: simulate | train | eval | sweep | spectrum |
oracle | estimate-k.

Every run is reproducible from (config, seed): datasets, checkpoints, and
CSV outputs are byte-identical across reruns. Outputs are written to a
temporary file and renamed into place only on success. Failures print one
machine-parsable line, ``error:<category>: <message>``, and exit nonzero.

Dataset files carry sensor count, wavefront parameters, and the angle grid
in their header; evaluation reconstructs the array as the standard
half-wavelength line layout (custom sensor positions are a simulation-side
feature; datasets do not embed them).
"""

from __future__ import annotations

import argparse
import json
import math
import multiprocessing
import os
import sys
from typing import Optional, Sequence

import numpy as np

from . import model as model_mod
from .arraymodel import WaveConfig, manifold, ula_half_wavelength
from .beamform import (
    MVDR_DEFAULT_LOADING,
    SpatialSpectrum,
    cbf_filter,
    mvdr_filter,
    music_spectrum,
    noise_subspace,
    oracle_filter,
    peak_search,
    spectrum_from_filter,
)
from .complexlin import ComplexMatrix
from .errors import ConfigError, DoaBeamError
from .fileio import atomic_write_text
from .metrics import (
    EvalRecord,
    aggregate_rmspe,
    align,
    f1_from_counts,
    k_accuracy,
    records_to_csv,
    rmspe,
)
from .nn import read_checkpoint, write_checkpoint
from .rng import Stream, derive_seed
from .runconfig import KNOWN_METHODS, RunConfig, load_config
from .scenario import (
    DatasetHeader,
    Scenario,
    generate_dataset,
    grid_from_header,
    read_dataset,
    write_dataset,
)


def _fmt(v) -> str:
    if isinstance(v, bool):
        return "1" if v else "0"
    if isinstance(v, (int, np.integer)):
        return str(int(v))
    if isinstance(v, float):
        return repr(v)
    return str(v)


def _write_csv(path: str, columns: Sequence[str], rows: Sequence[Sequence]) -> None:
    lines = [",".join(columns)]
    lines.extend(",".join(_fmt(v) for v in row) for row in rows)
    atomic_write_text(path, "\n".join(lines) + "\n")


# ---------------------------------------------------------------------------
# evaluation core (shared by eval, sweep, spectrum, estimate-k)


class _MethodRunner:
    """Per-dataset evaluation state: geometry, manifold, optional model."""

    def __init__(self, header: DatasetHeader, methods: Sequence[str], model_path):
        self.grid = grid_from_header(header)
        self.wave = WaveConfig(f_hz=header.f_hz, c_mps=header.c_mps)
        self.geom = ula_half_wavelength(header.m, self.wave)
        self.a = manifold(self.geom, self.wave, self.grid)
        self.header = header
        self.methods = tuple(methods)
        for m in self.methods:
            if m not in KNOWN_METHODS:
                raise ConfigError(f"unknown method {m!r}")
        self.cbf = cbf_filter(self.a) if "cbf" in self.methods else None
        self.net = None
        if "beamformnet" in self.methods:
            if model_path is None:
                raise ConfigError("method 'beamformnet' needs --model <checkpoint>")
            params, mcfg = model_mod.load_model(model_path)
            if mcfg.m != header.m or mcfg.r != self.grid.r:
                raise ConfigError(
                    f"model is (m={mcfg.m}, r={mcfg.r}) but dataset is "
                    f"(m={header.m}, r={self.grid.r})"
                )
            a_side = model_mod.encode_a_side(params, mcfg, self.a)
            self.net = (params, mcfg, a_side)

    def spectrum(self, method: str, sample: Scenario) -> SpatialSpectrum:
        """Raw spatial spectrum of one sample under one method."""
        if method == "cbf":
            return spectrum_from_filter(self.cbf, sample.x, self.grid)
        if method == "mvdr":
            filt = mvdr_filter(sample.x, self.a, MVDR_DEFAULT_LOADING)
            return spectrum_from_filter(filt, sample.x, self.grid)
        if method == "music":
            return music_spectrum(sample.x, self.a, sample.k, self.grid)
        params, mcfg, a_side = self.net
        padded = model_mod.pad_snapshots(sample.x, mcfg.t_train)
        res = model_mod.forward(params, mcfg, self.a, padded, grid=self.grid, a_side=a_side)
        return res.spectrum

    def peak_spectrum(self, method: str, sample: Scenario) -> SpatialSpectrum:
        """The spectrum peak_search runs on. The trained model's tanh output
        is calibrated for absolute thresholds; classical spectra are
        scale-free, so they are max-normalized first (documented)."""
        spec = self.spectrum(method, sample)
        if method == "beamformnet":
            return spec
        top = float(np.max(spec.p))
        p = spec.p / top if top > 0 else spec.p
        return SpatialSpectrum(p=p, rho=np.tanh(p), grid=self.grid)


def evaluate_scenarios(
    header: DatasetHeader,
    scenarios: Sequence[Scenario],
    methods: Sequence[str],
    threshold: float,
    model_path=None,
    rho_err: float = 0.0,
) -> list[EvalRecord]:
    """One EvalRecord per (sample, method). The record's seed column is the
    sample's index within the dataset."""
    runner = _MethodRunner(header, methods, model_path)
    records = []
    for i, sample in enumerate(scenarios):
        truth = sample.angles
        truth_ind = np.isin(np.arange(runner.grid.r), sample.grid_labels)
        for method in runner.methods:
            spec = runner.peak_spectrum(method, sample)
            peaks = peak_search(spec, threshold)
            est = align(peaks, sample.k, spec)
            pred_ind = np.zeros(runner.grid.r, dtype=bool)
            pred_ind[[p.index for p in peaks]] = True
            tp = int(np.sum(pred_ind & truth_ind))
            fp = int(np.sum(pred_ind & ~truth_ind))
            fn = int(np.sum(~pred_ind & truth_ind))
            records.append(
                EvalRecord(
                    method=method,
                    k_true=sample.k,
                    t=sample.t,
                    snr_db=sample.snr_db,
                    rho_err=rho_err,
                    coherent=sample.coherent,
                    seed=i,
                    rmspe_rad=rmspe(truth, est),
                    k_est=len(peaks),
                    f1=f1_from_counts(tp, fp, fn),
                )
            )
    return records


# ---------------------------------------------------------------------------
# subcommands


def _cmd_simulate(args) -> int:
    cfg = load_config(args.config, args.set)
    count = cfg.sample_count(args.split)
    header, scenarios = generate_dataset(cfg.sim_config(), count, cfg.split_seed(args.split))
    write_dataset(args.out, header, scenarios)
    print(f"wrote {args.out} split={args.split} samples={count}")
    return 0


def _cmd_train(args) -> int:
    cfg = load_config(args.config, args.set)
    mcfg = cfg.model_config()
    sim = cfg.sim_config()
    if mcfg.t_train != sim.t:
        raise ConfigError(
            f"model.t_train ({mcfg.t_train}) must equal data.t ({sim.t}) for training"
        )
    tr = cfg.train_section()
    _, train_set = generate_dataset(sim, cfg.sample_count("train"), cfg.split_seed("train"))
    _, val_set = generate_dataset(sim, cfg.sample_count("val"), cfg.split_seed("val"))
    a = manifold(cfg.geometry(), cfg.wave(), cfg.grid())
    params = model_mod.init_params(mcfg)

    def log(stats):
        print(
            f"epoch={stats.epoch} train_loss={stats.train_loss:.6f} "
            f"val_f1={stats.val_f1:.4f}{' *' if stats.improved else ''}",
            flush=True,
        )

    result = model_mod.train(
        params,
        mcfg,
        a,
        train_set,
        val_set,
        epochs=tr.epochs,
        batch_size=tr.batch,
        lr=tr.lr,
        patience=tr.patience,
        seed=cfg.data_seed,
        log=log,
    )
    model_mod.save_model(args.out, params, mcfg)
    if args.history:
        _write_csv(
            args.history,
            ["epoch", "train_loss", "val_f1"],
            [(h.epoch, h.train_loss, h.val_f1) for h in result.history],
        )
    print(f"wrote {args.out} best_epoch={result.best_epoch} best_val_f1={result.best_f1:.4f}")
    return 0


def _methods_from(args, cfg: Optional[RunConfig] = None) -> list[str]:
    if args.method:
        return list(args.method)
    if cfg is not None:
        return list(cfg.eval_section().methods)
    return ["cbf"]


def _cmd_eval(args) -> int:
    header, scenarios = read_dataset(args.dataset)
    methods = _methods_from(args)
    records = evaluate_scenarios(
        header, scenarios, methods, args.threshold, args.model, rho_err=args.rho_err
    )
    atomic_write_text(args.out, records_to_csv(records))
    print(f"wrote {args.out} rows={len(records)}")
    return 0


_SWEEP_PARAMS = {
    # name -> (section, key, parser, CSV column, value-to-CSV transform)
    "K": ("data", "k", int, "k", lambda v: v),
    "T": ("data", "t", int, "t", lambda v: v),
    "snr_db": ("data", "snr_db", float, "snr_db", lambda v: v),
    "M": ("array", "m", int, "m", lambda v: v),
    "delta_theta": ("data", "delta_theta_deg", float, "delta_theta_rad", math.radians),
    "rho_err": ("data", "rho_err", float, "rho_err", lambda v: v),
}


def _sweep_point(payload) -> list[dict]:
    raw_cfg, param, value, methods, threshold, model_path, point_seed = payload
    cfg = RunConfig(raw_cfg)
    sim = cfg.sim_config()
    header, scenarios = generate_dataset(sim, cfg.sample_count("test"), point_seed)
    records = evaluate_scenarios(
        header, scenarios, methods, threshold, model_path, rho_err=sim.rho_err
    )
    _, _, _, column, to_csv = _SWEEP_PARAMS[param]
    rows = []
    for method in methods:
        sub = [r for r in records if r.method == method]
        rows.append(
            {
                column: to_csv(value),
                "method": method,
                "rmspe_rad": aggregate_rmspe([r.rmspe_rad for r in sub]),
                "f1": float(np.mean([r.f1 for r in sub])),
                "k_acc": k_accuracy(sub),
                "n": len(sub),
            }
        )
    return rows


def _cmd_sweep(args) -> int:
    if args.param not in _SWEEP_PARAMS:
        raise ConfigError(
            f"unknown sweep parameter {args.param!r} "
            f"(one of {', '.join(_SWEEP_PARAMS)})"
        )
    section, key, parse, column, _ = _SWEEP_PARAMS[args.param]
    try:
        values = [parse(v.strip()) for v in args.values.split(",") if v.strip() != ""]
    except ValueError as exc:
        raise ConfigError(f"bad --values entry: {exc}") from exc
    if not values:
        raise ConfigError("--values is empty")
    cfg = load_config(args.config, args.set)
    methods = _methods_from(args, cfg)
    if "beamformnet" in methods:
        if args.model is None:
            raise ConfigError("method 'beamformnet' needs --model <checkpoint>")
        if args.param == "M":
            raise ConfigError(
                "a trained model has a fixed sensor count; sweep M with "
                "classical methods only"
            )

    payloads = []
    for index, value in enumerate(values):
        point = json.loads(json.dumps(cfg.raw))  # deep copy via JSON (config is JSON)
        for pair in (("k", "k_set"), ("snr_db", "snr_set")):
            if key in pair:
                for drop in pair:
                    point[section].pop(drop, None)
        point[section][key] = value
        RunConfig(point)  # validate the point before any work
        payloads.append(
            (
                point,
                args.param,
                value,
                methods,
                args.threshold if args.threshold is not None else cfg.eval_section().threshold,
                args.model,
                derive_seed(cfg.split_seed("test"), index),
            )
        )

    threads = int(os.environ.get("BFN_THREADS", "1"))
    if threads > 1 and len(payloads) > 1:
        ctx = multiprocessing.get_context("fork")
        with ctx.Pool(processes=min(threads, len(payloads))) as pool:
            results = pool.map(_sweep_point, payloads)
    else:
        results = [_sweep_point(p) for p in payloads]

    columns = [column, "method", "rmspe_rad", "f1", "k_acc", "n"]
    rows = [[row[c] for c in columns] for point_rows in results for row in point_rows]
    _write_csv(args.out, columns, rows)
    print(f"wrote {args.out} points={len(values)} methods={len(methods)}")
    return 0


def _cmd_spectrum(args) -> int:
    header, scenarios = read_dataset(args.dataset)
    if not 0 <= args.index < len(scenarios):
        raise ConfigError(f"--index {args.index} outside dataset of {len(scenarios)}")
    methods = _methods_from(args)
    runner = _MethodRunner(header, methods, args.model)
    sample = scenarios[args.index]
    rows = []
    for method in methods:
        spec = runner.spectrum(method, sample)
        for g in range(runner.grid.r):
            rows.append((method, float(runner.grid.thetas_deg[g]), float(spec.p[g]), float(spec.rho[g])))
    _write_csv(args.out, ["method", "grid_deg", "p", "rho"], rows)
    print(f"wrote {args.out} index={args.index} methods={len(methods)}")
    return 0


def _cmd_oracle(args) -> int:
    if args.k < 1 or args.m < 2 or args.r_noise < 0 or args.t < 1:
        raise ConfigError("oracle needs m >= 2, k >= 1, r-noise >= 0, t >= 1")
    wave = WaveConfig()
    geom = ula_half_wavelength(args.m, wave)
    from .arraymodel import AngleGrid

    grid = AngleGrid(1.0)
    stream = Stream(args.seed)
    labels: list[int] = []
    while len(labels) < args.k:
        pick = stream.pick(grid.r)
        if pick not in labels:
            labels.append(pick)
    a = manifold(geom, wave, grid)
    a_active = ComplexMatrix(a.re[:, labels], a.im[:, labels])
    s = ComplexMatrix.from_complex(stream.cnormal(args.k * args.t).reshape(args.k, args.t))
    if args.r_noise > 0:
        basis = stream.cnormal(args.m * args.r_noise).reshape(args.m, args.r_noise)
        weights = stream.cnormal(args.r_noise * args.t).reshape(args.r_noise, args.t)
        n_sub = noise_subspace(ComplexMatrix.from_complex(basis @ weights))
    else:
        n_sub = ComplexMatrix.zeros(args.m, 0)
    filt, (focus, null) = oracle_filter(a_active, s, n_sub)
    angles = ",".join(f"{grid.thetas_deg[g]:.0f}" for g in labels)
    print(
        f"m={args.m} k={args.k} r_noise={n_sub.cols} angles_deg={angles} "
        f"focus_residual={focus!r} null_residual={null!r}"
    )
    return 0


def _cmd_estimate_k(args) -> int:
    cfg = load_config(args.config, args.set)
    sim = cfg.sim_config()
    method = args.method[0] if args.method else "cbf"
    if method not in KNOWN_METHODS:
        raise ConfigError(f"unknown method {method!r}")
    k_max = max(sim.k_choices)
    tr_header, tr_set = generate_dataset(sim, cfg.sample_count("train"), cfg.split_seed("train"))
    te_header, te_set = generate_dataset(sim, cfg.sample_count("test"), cfg.split_seed("test"))
    runner = _MethodRunner(tr_header, (method,), args.model)

    def spectra_of(samples):
        out = np.zeros((len(samples), runner.grid.r))
        for i, s in enumerate(samples):
            spec = runner.spectrum(method, s)
            top = float(np.max(spec.p))
            out[i] = spec.p / top if top > 0 else spec.p
        return out

    est = model_mod.init_estimator(runner.grid.r, k_max=k_max, seed=cfg.raw["model"].get("seed", 0))
    tr = cfg.train_section()
    history = model_mod.train_estimator(
        est,
        spectra_of(tr_set),
        np.array([s.k for s in tr_set]),
        epochs=tr.epochs,
        batch_size=tr.batch,
        lr=tr.lr,
        seed=cfg.data_seed,
    )
    test_spectra = spectra_of(te_set)
    hits = sum(
        model_mod.estimate_k(est, test_spectra[i]) == te_set[i].k for i in range(len(te_set))
    )
    accuracy = hits / len(te_set) if te_set else float("nan")
    if args.out:
        meta = json.dumps({"r": runner.grid.r, "k_max": k_max, "method": method})
        write_checkpoint(args.out, {**est, "__estimator_config__": meta.encode("utf-8")})
        print(f"wrote {args.out}")
    print(f"k_accuracy={accuracy!r} n={len(te_set)} final_loss={history[-1]!r}")
    return 0


# ---------------------------------------------------------------------------
# argument surface


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="doabeam",
        description="Array-signal DoA estimation: simulate, train, and evaluate "
        "classical and learned beamformers.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    def common(p, model_flag=True):
        p.add_argument("--config", help="JSON run config (defaults to the desk preset)")
        p.add_argument(
            "--set",
            action="append",
            default=[],
            metavar="PATH=VALUE",
            help="override a config leaf, e.g. data.seed=3",
        )
        if model_flag:
            p.add_argument("--model", help="model checkpoint (needed for beamformnet)")

    p = sub.add_parser("simulate", help="generate a dataset file")
    common(p, model_flag=False)
    p.add_argument("--out", required=True)
    p.add_argument("--split", default="test", choices=["train", "val", "test"])
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("train", help="train the model; write checkpoint + history")
    common(p, model_flag=False)
    p.add_argument("--out", required=True, help="checkpoint path")
    p.add_argument("--history", help="per-epoch CSV path")
    p.set_defaults(func=_cmd_train)

    p = sub.add_parser("eval", help="evaluate methods over a dataset; write EvalRecord CSV")
    p.add_argument("--dataset", required=True)
    p.add_argument("--method", action="append", choices=list(KNOWN_METHODS))
    p.add_argument("--model")
    p.add_argument("--threshold", type=float, default=0.5)
    p.add_argument(
        "--rho-err",
        type=float,
        default=0.0,
        dest="rho_err",
        help="annotate records with the dataset's position-error level",
    )
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_eval)

    p = sub.add_parser("sweep", help="vary one parameter; write a tidy aggregate CSV")
    common(p)
    p.add_argument("--param", required=True, help=f"one of {', '.join(_SWEEP_PARAMS)}")
    p.add_argument("--values", required=True, help="comma-separated values")
    p.add_argument("--method", action="append", choices=list(KNOWN_METHODS))
    p.add_argument("--threshold", type=float, default=None)
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_sweep)

    p = sub.add_parser("spectrum", help="write grid_deg, P, rho per method for one sample")
    p.add_argument("--dataset", required=True)
    p.add_argument("--index", type=int, default=0)
    p.add_argument("--method", action="append", choices=list(KNOWN_METHODS))
    p.add_argument("--model")
    p.add_argument("--out", required=True)
    p.set_defaults(func=_cmd_spectrum)

    p = sub.add_parser("oracle", help="exact focusing-filter demo; prints residuals")
    p.add_argument("--m", type=int, required=True)
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--r-noise", type=int, required=True, dest="r_noise")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--t", type=int, default=50)
    p.set_defaults(func=_cmd_oracle)

    p = sub.add_parser("estimate-k", help="train/evaluate the source-count estimator")
    common(p)
    p.add_argument("--method", action="append", choices=list(KNOWN_METHODS))
    p.add_argument("--out", help="estimator checkpoint path")
    p.set_defaults(func=_cmd_estimate_k)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except DoaBeamError as exc:
        print(f"error:{exc.category}: {exc}", file=sys.stderr)
        return 1
    except OSError as exc:
        print(f"error:io: {exc}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
