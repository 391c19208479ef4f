"""``dann-amc`` command line: simulate, run, report, embed, inspect."""

from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import os
import sys
import time
import traceback
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

import numpy as np

from . import __version__
from . import config as cfgmod
from .data import Dataset, export_csv, from_feature_matrix, load_csv, make_splits, write_manifest
from .data import fit_scaler
from .features import extract
from .models import extract_features, load_model, save_model
from .report import EmptyRunRoot, cell_dir, read_status, write_report
from .signal import domain_config, gen_frameset
from .train import domain_probe, evaluate, improvement, train_baseline, train_dann
from .tsne import export_plot_data, render_scatter, stratified_subsample, tsne

log = logging.getLogger("dann_amc")

EXIT_OK, EXIT_FAILED, EXIT_USAGE = 0, 1, 2
SUMMARY_COLS = ["band", "direction", "seed", "status", "baseline_overall_acc", "baseline_avg_acc",
                "dann_overall_acc", "dann_avg_acc", "dca_before", "dca_after", "wall_time_s"]


def _dump_json(path: Path, obj) -> None:
    path.write_text(json.dumps(obj, sort_keys=True, indent=1) + "\n")


def _atomic_write(path: Path, writer) -> None:
    tmp = path.with_name(path.name + ".part")
    try:
        writer(tmp)
        os.replace(tmp, path)
    finally:
        tmp.unlink(missing_ok=True)


@contextlib.contextmanager
def _thread_limit(deterministic: bool):
    if not deterministic:
        yield
        return
    from threadpoolctl import threadpool_limits
    with threadpool_limits(limits=1):
        yield


# ---------------------------------------------------------------- simulate

def data_path(out: Path, band: str, domain: str) -> Path:
    return out / "data" / f"{band}_{domain}.csv"


def simulate(cfg: cfgmod.ExperimentConfig, out: Path, seed: int) -> list[Path]:
    """Write one feature CSV per (band, domain); a failure leaves no partial files behind."""
    (out / "data").mkdir(parents=True, exist_ok=True)
    spec = cfg.feature_spec()
    d = cfg.data
    written = []
    try:
        for band in cfg.experiment.bands:
            for domain in ("rayleigh", "rician"):
                ch = domain_config(domain, band, seed, d.snr_db, d.k_factor, d.fading, d.band_snr_offset_db)
                ds = from_feature_matrix(extract(gen_frameset(d.per_class, d.frame_length, ch), spec))
                path = data_path(out, band, domain)
                _atomic_write(path, lambda p, ds=ds: export_csv(ds, p, d.label_column))
                written.append(path)
                log.info("wrote %s (%d rows)", path, len(ds))
    except BaseException:
        for p in written:
            p.unlink(missing_ok=True)
        raise
    return written


def _domain_files(cfg: cfgmod.ExperimentConfig, out: Path, band: str) -> dict[str, Path]:
    if cfg.data.source == "csv":
        try:
            entry = cfg.data.csv[band]
            return {"rayleigh": Path(entry["rayleigh"]), "rician": Path(entry["rician"])}
        except KeyError:
            raise FileNotFoundError(f"data.csv has no rayleigh/rician paths for band {band}") from None
    return {dom: data_path(out, band, dom) for dom in ("rayleigh", "rician")}


# ---------------------------------------------------------------- run

def _history_dict(h) -> dict:
    return {"monitor": h.monitor, "best_epoch": h.best_epoch, "stopped_early": h.stopped_early,
            "epochs": h.epochs, "steps": h.steps}


def _embed_cell(d: Path, model, name: str, src: Dataset, tgt: Dataset, embed: cfgmod.EmbedSection, seed: int):
    x = np.vstack([src.features, tgt.features])
    y = np.concatenate([src.labels, tgt.labels])
    dom = np.array([src.domain] * len(src) + [tgt.domain] * len(tgt), dtype=object)
    keep = stratified_subsample(y, dom, embed.per_group, seed)
    emb = tsne(extract_features(model, x[keep]), embed.tsne_config(seed), labels=y[keep], domains=dom[keep])
    export_plot_data(emb, d / f"embed_{name}.csv")
    render_scatter(emb, d / f"embed_{name}.svg", title=name)
    return emb


def _rel(path: Path, root: Path) -> str:
    """Data paths inside the run root are stored relative to it so run roots can be moved."""
    try:
        return str(Path(path).resolve().relative_to(Path(root).resolve()))
    except ValueError:
        return str(Path(path).resolve())


def run_cell(cfg: cfgmod.ExperimentConfig, out: Path, band: str, direction: str, seed: int) -> dict:
    """Train and evaluate both models for one (band, direction, seed); writes the cell directory."""
    d = cell_dir(out, band, direction, seed)
    d.mkdir(parents=True, exist_ok=True)
    (d / "status.json").unlink(missing_ok=True)
    t0 = time.perf_counter()
    status = {"band": band, "direction": direction, "seed": seed, "digest": cfg.digest()}
    try:
        (d / "config.yaml").write_text(cfg.dump())
        files = _domain_files(cfg, out, band)
        src_dom, tgt_dom = direction.split("_to_")
        src = load_csv(files[src_dom], cfg.data.label_column, domain=src_dom, band=band)
        tgt = load_csv(files[tgt_dom], cfg.data.label_column, domain=tgt_dom, band=band)
        plan = make_splits(src, tgt, seed)
        scaler = fit_scaler(src.subset(plan.source_train))
        s_tr, s_va = (scaler.transform(src.subset(i)) for i in (plan.source_train, plan.source_val))
        t_un, t_ev = (scaler.transform(tgt.subset(i)) for i in (plan.target_unlabeled, plan.target_eval))
        write_manifest(d / "manifest.json", source_file=_rel(files[src_dom], out),
                       target_file=_rel(files[tgt_dom], out),
                       band=band, direction=direction, scaler=scaler.to_dict(), splits=plan.to_dict(),
                       source_fingerprint=src.fingerprint(), target_fingerprint=tgt.fingerprint())

        tcfg = cfg.train_config(seed)
        base, hb = train_baseline(s_tr, s_va, tcfg, target_val=t_ev)
        dann, hd = train_dann(s_tr, s_va, t_un.features, tcfg, target_val=t_ev)
        save_model(base, d / "baseline.ckpt.json")
        save_model(dann, d / "dann.ckpt.json")
        _dump_json(d / "history_baseline.json", _history_dict(hb))
        _dump_json(d / "history_dann.json", _history_dict(hd))

        s_all, t_all = scaler.transform(src), scaler.transform(tgt)
        dca_before = domain_probe(extract_features(base, s_all), extract_features(base, t_all), seed)
        dca_after = domain_probe(extract_features(dann, s_all), extract_features(dann, t_all), seed)
        rb, rd = evaluate(base, t_ev), evaluate(dann, t_ev)
        for r in (rb, rd):
            r.dca_before, r.dca_after = dca_before, dca_after
        rd.abs_improvement, rd.pct_improvement = improvement(rb.avg_acc, rd.avg_acc)
        _dump_json(d / "baseline_report.json", rb.to_dict())
        _dump_json(d / "dann_report.json", rd.to_dict())

        if cfg.embed.enabled:
            for name, model in (("baseline", base), ("dann", dann)):
                _embed_cell(d, model, name, s_va, t_ev, cfg.embed, seed)
        status.update(status="ok", baseline_overall_acc=rb.overall_acc, baseline_avg_acc=rb.avg_acc,
                      dann_overall_acc=rd.overall_acc, dann_avg_acc=rd.avg_acc,
                      dca_before=dca_before, dca_after=dca_after)
    except Exception as exc:  # one failed cell must not stop the others
        log.error("cell %s/%s/seed%d failed: %s", band, direction, seed, exc)
        status.update(status="failed", error=f"{type(exc).__name__}: {exc}", traceback=traceback.format_exc())
    status["wall_time_s"] = round(time.perf_counter() - t0, 3)
    _dump_json(d / "status.json", status)
    return status


def _cell_job(args):
    raw, out, band, direction, seed, deterministic = args
    with _thread_limit(deterministic):
        return run_cell(cfgmod.from_dict(raw), Path(out), band, direction, seed)


def run(cfg: cfgmod.ExperimentConfig, out: Path, jobs: int = 1, deterministic: bool = False) -> list[dict]:
    """Run every configured cell; completed cells with a matching config digest are skipped."""
    out.mkdir(parents=True, exist_ok=True)
    (out / "config.yaml").write_text(cfg.dump())
    if cfg.data.source == "simulate":
        missing = [b for b in cfg.experiment.bands
                   if not all(data_path(out, b, dom).exists() for dom in ("rayleigh", "rician"))]
        if missing:
            simulate(cfgmod.with_overrides(cfg, bands=missing), out, cfg.experiment.seeds[0])
    todo, results = [], {}
    for band in cfg.experiment.bands:
        for direction in cfg.experiment.directions:
            for seed in cfg.experiment.seeds:
                st = read_status(cell_dir(out, band, direction, seed))
                if st and st.get("status") == "ok" and st.get("digest") == cfg.digest():
                    log.info("skip finished cell %s/%s/seed%d", band, direction, seed)
                    results[(band, direction, seed)] = st
                else:
                    todo.append((cfg.to_dict(), str(out), band, direction, seed, deterministic))
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            for job, st in zip(todo, pool.map(_cell_job, todo)):
                results[job[2:5]] = st
    else:
        for job in todo:
            results[job[2:5]] = _cell_job(job)
    ordered = [results[k] for k in sorted(results, key=lambda k: (str(k[0]), k[1], k[2]))]
    write_summary(out, ordered)
    return ordered


def write_summary(out: Path, statuses: list[dict]) -> None:
    with open(out / "summary.csv", "w", newline="") as fh:
        w = csv.DictWriter(fh, SUMMARY_COLS, extrasaction="ignore", lineterminator="\n")
        w.writeheader()
        for st in statuses:
            w.writerow(st)


# ---------------------------------------------------------------- embed / inspect

def embed_cell(path: Path, per_group: int | None = None, iterations: int | None = None) -> list[Path]:
    """Recompute t-SNE exports for an existing cell from its checkpoints and manifest."""
    cfg = cfgmod.load(path / "config.yaml")
    man = json.loads((path / "manifest.json").read_text())
    seed = int(man["splits"]["seed"])
    root = path.parents[3]     # <root>/cells/<band>/<direction>/seed<k>
    src_dom, tgt_dom = man["direction"].split("_to_")
    src = load_csv(root / man["source_file"], cfg.data.label_column, domain=src_dom)
    tgt = load_csv(root / man["target_file"], cfg.data.label_column, domain=tgt_dom)
    sc = man["scaler"]
    scale = np.maximum(np.array(sc["stds"]), sc["std_floor"])
    norm = lambda ds, idx: Dataset((ds.features[idx] - np.array(sc["means"])) / scale,  # noqa: E731
                                   ds.labels[idx], ds.domain)
    s_va, t_ev = norm(src, man["splits"]["source_val"]), norm(tgt, man["splits"]["target_eval"])
    embed = cfg.embed
    if per_group is not None:
        embed.per_group = per_group
    if iterations is not None:
        embed.iterations = iterations
    written = []
    for name in ("baseline", "dann"):
        model = load_model(path / f"{name}.ckpt.json")
        _embed_cell(path, model, name, s_va, t_ev, embed, seed)
        written += [path / f"embed_{name}.csv", path / f"embed_{name}.svg"]
    return written


# ---------------------------------------------------------------- argparse

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--config", help="YAML experiment config")
    common.add_argument("--seed", type=int, help="run a single seed instead of experiment.seeds")
    common.add_argument("--out", help=f"output root (default ${cfgmod.OUT_ENV} or ./runs)")
    common.add_argument("--deterministic", action="store_true", help="single-threaded BLAS for byte-stable output")
    common.add_argument("--band", action="append", help="restrict to this band (repeatable)")
    common.add_argument("--direction", action="append", choices=cfgmod.DIRECTIONS)
    common.add_argument("-v", "--verbose", action="store_true")

    p = argparse.ArgumentParser(prog="dann-amc", description=__doc__)
    p.add_argument("--version", action="version", version=__version__)
    sub = p.add_subparsers(dest="command", required=True)
    sub.add_parser("simulate", parents=[common], help="write per-band, per-domain feature CSVs")
    r = sub.add_parser("run", parents=[common], help="train and evaluate every (band, direction, seed) cell")
    r.add_argument("--jobs", type=int, default=1)
    rep = sub.add_parser("report", parents=[common], help="render tables from a run root")
    rep.add_argument("root", nargs="?", help="run root (defaults to --out)")
    e = sub.add_parser("embed", parents=[common], help="recompute t-SNE exports for one cell directory")
    e.add_argument("cell")
    e.add_argument("--per-group", type=int)
    e.add_argument("--iterations", type=int)
    i = sub.add_parser("inspect", parents=[common], help="print a cell manifest and status")
    i.add_argument("cell")
    return p


def _load_config(args) -> cfgmod.ExperimentConfig:
    cfg = cfgmod.load(args.config) if args.config else cfgmod.ExperimentConfig()
    return cfgmod.with_overrides(cfg, seed=args.seed, bands=args.band, directions=args.direction)


def main(argv=None) -> int:
    args = _parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    out = cfgmod.resolve_out(args.out, os.environ)
    try:
        with _thread_limit(args.deterministic):
            if args.command == "simulate":
                cfg = _load_config(args)
                for path in simulate(cfg, out, cfg.experiment.seeds[0]):
                    print(path)
                return EXIT_OK
            if args.command == "run":
                statuses = run(_load_config(args), out, max(1, args.jobs), args.deterministic)
                failed = [s for s in statuses if s["status"] != "ok"]
                for s in failed:
                    print(f"FAILED {s['band']}/{s['direction']}/seed{s['seed']}: {s['error']}", file=sys.stderr)
                print(out / "summary.csv")
                return EXIT_FAILED if failed else EXIT_OK
            if args.command == "report":
                root = Path(args.root) if args.root else out
                try:
                    files = write_report(root)
                except EmptyRunRoot:
                    print(f"dann-amc report: no completed run cells under {root}", file=sys.stderr)
                    return EXIT_USAGE
                for name in sorted(files):
                    if name.endswith(".txt"):
                        print(files[name])
                return EXIT_OK
            if args.command == "embed":
                for path in embed_cell(Path(args.cell), args.per_group, args.iterations):
                    print(path)
                return EXIT_OK
            if args.command == "inspect":
                cell = Path(args.cell)
                man = cell / "manifest.json"
                if not man.exists():
                    print(f"dann-amc inspect: no manifest in {cell}", file=sys.stderr)
                    return EXIT_USAGE
                doc = json.loads(man.read_text())
                doc["splits"] = {k: (f"{len(v)} indices" if isinstance(v, list) else v)
                                 for k, v in doc["splits"].items()}
                doc["status"] = {k: v for k, v in (read_status(cell) or {}).items() if k != "traceback"}
                print(json.dumps(doc, indent=1, sort_keys=True))
                return EXIT_OK
    except (ValueError, FileNotFoundError) as exc:
        print(f"dann-amc {args.command}: {exc}", file=sys.stderr)
        return EXIT_USAGE
    return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
