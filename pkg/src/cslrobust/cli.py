"""Command-line experiment driver: gen-data, train, eval, sweep, report.

Exit codes: 0 success, 1 unexpected failure, 2 configuration error,
3 training aborted, 4 checkpoint incompatible with the configuration.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import itertools
import json
import logging
import sys
from dataclasses import dataclass, replace
from pathlib import Path
from typing import Optional, Sequence

import numpy as np

from .config import RunConfig, json_safe, load_config, set_path, build_config, train_dict
from .data import Dataset, FormatError, GenerationError, cifar10_load, synth_gaussian_mixture
from .errors import ConfigError, TrainingAborted
from .geometry import RobustnessReport, write_embeddings_csv
from .models import CheckpointError, Encoder, encoder_init, load_checkpoint, save_checkpoint
from .trainer import SIMPLIFIED_ADV_NOTE, adversarial_train, embed, evaluate, linear_probe_train, train

log = logging.getLogger("cslrobust")

EXIT_OK, EXIT_FAILURE, EXIT_CONFIG, EXIT_ABORT, EXIT_CHECKPOINT = 0, 1, 2, 3, 4
CHECKPOINT_NAME = "encoder.ckpt"


def exit_code_for(exc: BaseException) -> int:
    if isinstance(exc, (ConfigError, FormatError, GenerationError)):
        return EXIT_CONFIG
    if isinstance(exc, TrainingAborted):
        return EXIT_ABORT
    if isinstance(exc, CheckpointError):
        return EXIT_CHECKPOINT
    return EXIT_FAILURE


def _write_json(path: Path, obj) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(json_safe(obj), indent=2, sort_keys=True) + "\n")


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def _fmt(v) -> str:
    if v is None:
        return ""
    if isinstance(v, float):
        return repr(v)
    return str(v)


def write_csv(path: Path, rows: list[dict], columns: Optional[list[str]] = None) -> None:
    if columns is None:
        columns = []
        for row in rows:
            columns += [k for k in row if k not in columns]
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        w = csv.writer(fh)
        w.writerow(columns)
        for row in rows:
            w.writerow([_fmt(row.get(c)) for c in columns])


def read_csv(path: Path) -> list[dict]:
    """Rows with numeric cells parsed to float and empty cells to None."""
    def parse(v: str):
        if v == "":
            return None
        try:
            return float(v)
        except ValueError:
            return v

    with open(path, newline="") as fh:
        return [{k: parse(v) for k, v in row.items()} for row in csv.DictReader(fh)]


# ------------------------------------------------------------------------ data


@dataclass
class Splits:
    train: Dataset
    test: Optional[Dataset]


def _data_dir(root: Path, seed: int) -> Path:
    return root / f"seed-{seed}"


def generate_data(cfg: RunConfig, data_root: Path) -> list[Path]:
    """Write train/test CSVs plus a manifest for each seed; returns the manifests."""
    if cfg.data.source != "synthetic":
        raise ConfigError("data.source", "gen-data only generates synthetic data")
    manifests = []
    for seed in cfg.seeds:
        syn = cfg.data.synthetic_config(seed)
        d = _data_dir(data_root, seed)
        d.mkdir(parents=True, exist_ok=True)
        files = {}
        for split in ("train", "test"):
            if split == "test" and syn.test_samples_per_class == 0:
                continue
            ds = synth_gaussian_mixture(syn, split)
            path = d / f"{split}.csv"
            ds.to_csv(path)
            files[path.name] = {"sha256": _sha256(path), "rows": len(ds)}
        manifest = {"schema": "cslrobust.manifest/1", "config_hash": cfg.config_hash,
                    "data_hash": cfg.data_hash, "seed": seed, "source": "synthetic",
                    "data": cfg.normalized()["data"], "files": files}
        _write_json(d / "manifest.json", manifest)
        manifests.append(d / "manifest.json")
        log.info("seed %d: wrote %s", seed, ", ".join(files))
    return manifests


def load_splits(cfg: RunConfig, data_root: Path, seed: int) -> Splits:
    if cfg.data.source == "synthetic":
        d = _data_dir(data_root, seed)
        manifest_path = d / "manifest.json"
        if not manifest_path.exists():
            raise ConfigError("data", f"no dataset for seed {seed} under {data_root}; run gen-data first")
        manifest = json.loads(manifest_path.read_text())
        if manifest.get("data_hash") != cfg.data_hash:
            raise ConfigError("data", f"{manifest_path} was generated from a different data config")
        for name, info in manifest["files"].items():
            if _sha256(d / name) != info["sha256"]:
                raise ConfigError("data", f"{d / name} does not match its manifest")
        k = cfg.data.synthetic["num_classes"]
        test = Dataset.from_csv(d / "test.csv", "test", k) if "test.csv" in manifest["files"] else None
        return Splits(Dataset.from_csv(d / "train.csv", "train", k), test)
    if cfg.data.source == "csv":
        tr = Dataset.from_csv(cfg.data.train_path)
        te = Dataset.from_csv(cfg.data.test_path, "test") if cfg.data.test_path else None
        k = max(tr.num_classes, te.num_classes if te else 0)
        tr.num_classes = k
        if te is not None:
            te.num_classes = k
        if cfg.data.limit:
            tr = tr.subset(slice(0, cfg.data.limit))
        return Splits(tr, te)
    tr = cifar10_load(cfg.data.train_path, cfg.data.limit)
    te = cifar10_load(cfg.data.test_path, cfg.data.limit, "test") if cfg.data.test_path else None
    return Splits(tr, te)


# ----------------------------------------------------------------------- train


def checkpoint_path(train_dir: Path, seed: int) -> Path:
    return train_dir / f"seed-{seed}" / CHECKPOINT_NAME


def _fn_trace(records: list[dict]) -> list[dict]:
    keys = ("epoch", "rho", "fn_precision", "fn_recall", "fn_flagged", "empty_anchor_steps")
    return [{k: r.get(k) for k in keys} for r in records if "fn_flagged" in r]


def train_seed(cfg: RunConfig, splits: Splits, seed: int, train_dir: Path) -> list[dict]:
    """Train one seed; writes its checkpoint and returns metrics records."""
    enc = encoder_init(cfg.encoder_config(seed, splits.train.sample_shape))
    tcfg = replace(cfg.train, seed=seed)
    every = max(1, tcfg.epochs // 10)

    path = checkpoint_path(train_dir, seed)
    path.parent.mkdir(parents=True, exist_ok=True)
    base_meta = {"config_hash": cfg.config_hash, "data_hash": cfg.data_hash, "seed": seed,
                 "method": cfg.method, "name": cfg.name, "train": train_dict(tcfg)}

    def progress(epoch, enc_now, record):
        if epoch % every == 0 or epoch == tcfg.epochs - 1:
            log.info("seed %d epoch %d loss %.4f rho %s", seed, epoch, record["loss"], record["rho"])
        k = cfg.checkpoint_every
        if k and (epoch + 1) % k == 0 and epoch < tcfg.epochs - 1:
            save_checkpoint(path.parent / f"epoch-{epoch + 1:04d}.ckpt", enc_now,
                            json_safe({**base_meta, "epochs_completed": epoch + 1}))

    fit = adversarial_train if tcfg.adversarial is not None else train
    enc, metrics = fit(enc, splits.train, tcfg, on_epoch=progress)
    records = [{"schema": "cslrobust.metrics/1", "config_hash": cfg.config_hash, "seed": seed,
                "method": cfg.method, **r} for r in metrics.records]
    meta = {**base_meta, "epochs_completed": tcfg.epochs, "fn_trace": _fn_trace(metrics.records),
            "notes": metrics.notes}
    save_checkpoint(path, enc, json_safe(meta))
    _write_json(path.parent / "timing.json", {"seed": seed, "epoch_seconds": metrics.wall_clock})
    return records


def write_metrics(path: Path, records: list[dict]) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w") as fh:
        for r in records:
            fh.write(json.dumps(json_safe(r), sort_keys=True) + "\n")


def run_train(cfg: RunConfig, data_root: Path, train_dir: Path) -> Path:
    records = []
    try:
        for seed in cfg.seeds:
            records += train_seed(cfg, load_splits(cfg, data_root, seed), seed, train_dir)
    finally:
        write_metrics(train_dir / "metrics.jsonl", records)
    return train_dir / "metrics.jsonl"


# ------------------------------------------------------------------------ eval


def check_compatible(cfg: RunConfig, enc: Encoder, meta: dict, splits: Splits, path: Path) -> None:
    expected = cfg.encoder_config(enc.config.seed, splits.train.sample_shape)
    if expected != enc.config:
        raise CheckpointError(f"{path}: encoder {enc.config.to_dict()} does not match config {expected.to_dict()}")


def eval_checkpoint(cfg: RunConfig, path: Path, data_root: Path,
                    embeddings_csv: Optional[Path] = None) -> RobustnessReport:
    enc, meta, _ = load_checkpoint(path)
    seed = int(meta.get("seed", enc.config.seed))
    splits = load_splits(cfg, data_root, seed)
    check_compatible(cfg, enc, meta, splits, path)
    if splits.test is None:
        raise ConfigError("data", "evaluation needs a test split")
    probe = linear_probe_train(enc, splits.train, cfg.probe.epochs, cfg.probe.learning_rate, cfg.probe.momentum)
    attacks = [replace(a, seed=seed) for a in cfg.attacks]
    method = meta.get("method", "unknown")
    report = evaluate(enc, probe, splits.test, attacks, cfg.corruptions, tau=cfg.train.tau,
                      augment=cfg.train.augment, corruption_clamp=cfg.corruption_clamp,
                      run_id=f"{method}/seed-{seed}", seed=seed, config_hash=cfg.config_hash,
                      method=method, fn_trace=meta.get("fn_trace"))
    if embeddings_csv is not None:
        embeddings_csv.parent.mkdir(parents=True, exist_ok=True)
        write_embeddings_csv(embeddings_csv, embed(enc, splits.test.x), splits.test.labels)
    report.notes.append(f"checkpoint config_hash {meta.get('config_hash')}")
    if meta.get("train", {}).get("adversarial"):
        report.notes.append(SIMPLIFIED_ADV_NOTE)
    return report


def report_row(r: RobustnessReport, keys: list[str]) -> dict:
    row = {"run_id": r.run_id, "method": r.method, "seed": r.seed, "config_hash": r.config_hash,
           "clean_accuracy": r.clean_accuracy}
    entries = {**r.attacks, **r.corruptions}
    for k in keys:
        e = entries.get(k)
        row[f"{k}.accuracy"] = e["accuracy"] if e else None
        row[f"{k}.p_drop"] = e["p_drop"] if e else None
    sep = r.separation or {}
    row["separation_ratio"] = sep.get("ratio")
    row["avg_intra"] = sep.get("avg_intra")
    row["avg_inter"] = sep.get("avg_inter")
    au = r.alignment_uniformity or {}
    row["alignment"] = au.get("alignment")
    row["uniformity"] = au.get("uniformity")
    row["errors"] = ";".join(sorted(r.errors)) or None
    return row


_NOT_METRICS = {"run_id", "method", "seed", "config_hash", "errors", "cell", "status", "exit_code", "error"}


def summarize(rows: list[dict], group_by: Sequence[str] = ("method", "config_hash"),
              carry: Sequence[str] = ()) -> list[dict]:
    """Across-seed mean, min and max of every metric column, per group.

    ``carry`` columns are constant within a group and copied through.
    """
    groups: dict[tuple, list[dict]] = {}
    for row in rows:
        groups.setdefault(tuple(row.get(g) for g in group_by), []).append(row)
    skip = _NOT_METRICS | set(group_by) | set(carry)
    metrics = []
    for row in rows:
        metrics += [k for k, v in row.items() if k not in skip and k not in metrics and not isinstance(v, str)]
    out = []
    for key, members in groups.items():
        s = dict(zip(group_by, key))
        s.update({c: members[0].get(c) for c in carry})
        s["n_runs"] = len(members)
        s["seeds"] = ";".join(str(m["seed"]) for m in members)
        for col in metrics:
            vals = [m[col] for m in members if isinstance(m.get(col), (int, float))]
            s[f"{col}.mean"] = float(np.mean(vals)) if vals else None
            s[f"{col}.min"] = float(min(vals)) if vals else None
            s[f"{col}.max"] = float(max(vals)) if vals else None
        out.append(s)
    return out


def perturbation_keys(cfg: RunConfig) -> list[str]:
    return [a.key for a in cfg.attacks] + [c.key for c in cfg.corruptions]


def run_eval(cfg: RunConfig, data_root: Path, train_dir: Path, eval_dir: Path,
             checkpoints: Optional[Sequence[Path]] = None) -> Path:
    paths = list(checkpoints) if checkpoints else [checkpoint_path(train_dir, s) for s in cfg.seeds]
    for p in paths:
        if not Path(p).exists():
            raise CheckpointError(f"{p}: no such checkpoint")
    reports = []
    for i, p in enumerate(paths):
        log.info("evaluating %s", p)
        name = f"checkpoint-{i}.csv" if checkpoints else f"seed-{cfg.seeds[i]}.csv"
        reports.append(eval_checkpoint(cfg, Path(p), data_root, eval_dir / "embeddings" / name))
    if checkpoints and len({r.run_id for r in reports}) < len(reports):
        for r, p in zip(reports, paths):
            r.run_id = f"{r.run_id}@{p}"
    keys = perturbation_keys(cfg)
    rows = [report_row(r, keys) for r in reports]
    summary = summarize(rows, ("run_id",) if checkpoints else ("method", "config_hash"))
    write_csv(eval_dir / "comparison.csv", rows)
    write_csv(eval_dir / "comparison_summary.csv", summary)
    _write_json(eval_dir / "report.json", {"schema": "cslrobust.eval/1", "name": cfg.name,
                                           "config_hash": cfg.config_hash,
                                           "runs": [r.to_dict() for r in reports], "summary": summary})
    return eval_dir / "report.json"


# ----------------------------------------------------------------------- sweep


def sweep_cells(cfg: RunConfig) -> list[dict]:
    """Cartesian product of the sweep axes, in declaration order."""
    axes = list(cfg.sweep.items())
    return [dict(zip([a for a, _ in axes], combo)) for combo in itertools.product(*[v for _, v in axes])]


def cell_config(cfg: RunConfig, cell: dict, out: Path) -> RunConfig:
    raw = json.loads(json.dumps(cfg.source, default=str))
    raw.pop("sweep", None)
    for axis, value in cell.items():
        if axis == "loss":
            raw = set_path(raw, "train.loss", value)
        elif axis == "rho":
            lo, hi = value
            raw = set_path(set_path(raw, "train.rho_initial", lo), "train.rho_final", hi)
        elif axis == "epsilon":
            attacks = (raw.get("eval") or {}).get("attacks") or []
            raw = set_path(raw, "eval.attacks", [{**a, "epsilon": value} for a in attacks])
        else:
            raw = set_path(raw, axis, value)
    raw["out"] = str(out)
    raw["seeds"] = list(cfg.seeds)
    base = cfg.data.train_path.parent if cfg.data.train_path else Path(".")
    if cfg.data.source != "synthetic":
        raw = set_path(raw, "data.train_path", str(cfg.data.train_path))
        if cfg.data.test_path:
            raw = set_path(raw, "data.test_path", str(cfg.data.test_path))
    return build_config(raw, base)


def _cell_label(cell: dict) -> dict:
    out = {}
    for axis, value in cell.items():
        if axis == "rho":
            out["rho_initial"], out["rho_final"] = float(value[0]), float(value[1])
        else:
            out[axis] = value
    return out


def run_sweep(cfg: RunConfig, root: Path) -> tuple[Path, int]:
    """Train and evaluate every cell x seed; failures are recorded, not raised."""
    data_root = root / "data"
    if cfg.data.source == "synthetic":
        generate_data(cfg, data_root)
    sweep_dir = root / "sweep"
    cells = sweep_cells(cfg)
    rows, first_failure = [], EXIT_OK
    trained: dict[str, Path] = {}
    all_keys: list[str] = []
    for i, cell in enumerate(cells):
        cell_dir = sweep_dir / f"cell-{i:03d}"
        label = {"cell": i, **_cell_label(cell)}
        try:
            ccfg = cell_config(cfg, cell, cell_dir)
        except Exception as exc:  # invalid cell, every seed fails
            first_failure = first_failure or exit_code_for(exc)
            rows += [{**label, "seed": s, "status": "failed", "exit_code": exit_code_for(exc),
                      "error": f"{type(exc).__name__}: {exc}"} for s in cfg.seeds]
            continue
        _write_json(cell_dir / "cell.json", {"cell": i, "axes": cell, "config_hash": ccfg.config_hash})
        cell_data = data_root
        if ccfg.data_hash != cfg.data_hash:
            cell_data = cell_dir / "data"
            try:
                generate_data(ccfg, cell_data)
            except Exception as exc:
                first_failure = first_failure or exit_code_for(exc)
        keys = perturbation_keys(ccfg)
        all_keys += [k for k in keys if k not in all_keys]
        # identical training in an earlier cell is reused (eval-only axes such as epsilon)
        train_key = json.dumps({k: ccfg.normalized()[k] for k in ("data", "encoder", "train")}, sort_keys=True)
        train_dir = trained.setdefault(train_key, cell_dir / "train")
        reports = []
        for seed in cfg.seeds:
            row = {**label, "seed": seed, "method": ccfg.method, "config_hash": ccfg.config_hash}
            try:
                ckpt = checkpoint_path(train_dir, seed)
                if not ckpt.exists():
                    records = train_seed(ccfg, load_splits(ccfg, cell_data, seed), seed, train_dir)
                    write_metrics(train_dir / f"seed-{seed}" / "metrics.jsonl", records)
                report = eval_checkpoint(ccfg, ckpt, cell_data,
                                         cell_dir / "eval" / "embeddings" / f"seed-{seed}.csv")
                reports.append(report)
                row.update(report_row(report, keys), status="ok", exit_code=EXIT_OK)
            except Exception as exc:
                code = exit_code_for(exc)
                first_failure = first_failure or code
                row.update(status="failed", exit_code=code, error=f"{type(exc).__name__}: {exc}")
                log.warning("cell %d seed %d failed: %s", i, seed, exc)
            rows.append(row)
        _write_json(cell_dir / "eval" / "report.json", {
            "schema": "cslrobust.eval/1", "name": f"{cfg.name}/cell-{i:03d}", "config_hash": ccfg.config_hash,
            "runs": [r.to_dict() for r in reports],
            "summary": summarize([report_row(r, keys) for r in reports])})
    fixed = ["cell"] + [c for c in _cell_columns(cells)] + ["seed", "method", "config_hash", "status",
                                                          "exit_code", "error", "clean_accuracy"]
    metric_cols = [f"{k}.{m}" for k in all_keys for m in ("accuracy", "p_drop")]
    tail = ["separation_ratio", "avg_intra", "avg_inter", "alignment", "uniformity", "errors"]
    write_csv(sweep_dir / "sweep.csv", rows, fixed + metric_cols + tail)
    ok_rows = [r for r in rows if r.get("status") == "ok"]
    write_csv(sweep_dir / "sweep_summary.csv",
              summarize(ok_rows, ("cell", "method", "config_hash"), carry=_cell_columns(cells)))
    return sweep_dir / "sweep.csv", first_failure


def _cell_columns(cells: list[dict]) -> list[str]:
    cols = []
    for cell in cells:
        cols += [k for k in _cell_label(cell) if k not in cols]
    return cols


# ---------------------------------------------------------------------- report


def collect_reports(paths: Sequence[Path]) -> list[dict]:
    found = []
    for root in paths:
        root = Path(root)
        files = [root] if root.is_file() else sorted(root.rglob("report.json"))
        for f in files:
            doc = json.loads(f.read_text())
            if doc.get("schema") == "cslrobust.eval/1":
                found.append({"path": str(f), **doc})
    return found


def _cell(summary: dict, col: str) -> str:
    mean = summary.get(f"{col}.mean")
    if mean is None:
        return "-"
    lo, hi = summary.get(f"{col}.min"), summary.get(f"{col}.max")
    return f"{mean:.3f} [{lo:.3f}, {hi:.3f}]"


def run_report(paths: Sequence[Path], out_dir: Path) -> Path:
    docs = collect_reports(paths)
    if not docs:
        raise ConfigError("paths", "no evaluation reports found")
    rows = []
    for doc in docs:
        for run in doc["runs"]:
            rows.append(report_row(RobustnessReport.from_dict(run), _report_keys(run)))
    summary = summarize(rows)
    write_csv(out_dir / "summary.csv", summary)
    keys = []
    for doc in docs:
        for run in doc["runs"]:
            keys += [k for k in _report_keys(run) if k not in keys]
    lines = ["| method | config | runs | clean | " + " | ".join(f"{k} acc | {k} P_Drop" for k in keys) + " | inter/intra |",
             "|" + "---|" * (4 + 2 * len(keys) + 1)]
    for s in summary:
        cells = [s["method"], s["config_hash"], str(s["n_runs"]), _cell(s, "clean_accuracy")]
        for k in keys:
            cells += [_cell(s, f"{k}.accuracy"), _cell(s, f"{k}.p_drop")]
        cells.append(_cell(s, "separation_ratio"))
        lines.append("| " + " | ".join(cells) + " |")
    lines += ["", "Values are across-seed mean [min, max].", ""]
    lines += [f"- {d['path']} (config {d['config_hash']})" for d in docs]
    (out_dir / "summary.md").write_text("\n".join(lines) + "\n")
    return out_dir / "summary.md"


def _report_keys(run: dict) -> list[str]:
    m = run["metrics"]
    return list(m["attacks"]) + list(m["corruptions"])


# ------------------------------------------------------------------------ main


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="cslrobust", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    def common(sp, config_required=True):
        sp.add_argument("--config", type=Path, required=config_required, help="YAML run config")
        sp.add_argument("--seed", type=int, help="run only this seed")
        sp.add_argument("--out", type=Path, help="output directory (default: $CSLROBUST_OUTPUT_ROOT/<name>)")
        sp.add_argument("--set", dest="overrides", action="append", default=[], metavar="KEY=VALUE",
                        help="override a config key, e.g. train.epochs=5")
        return sp

    common(sub.add_parser("gen-data", help="generate the synthetic dataset"))
    common(sub.add_parser("train", help="train one encoder per seed"))
    ev = common(sub.add_parser("eval", help="probe and attack trained encoders"))
    ev.add_argument("--checkpoint", type=Path, action="append",
                    help="evaluate these checkpoints instead of the run's own (repeatable)")
    common(sub.add_parser("sweep", help="train and evaluate a grid of configs"))
    rp = common(sub.add_parser("report", help="summarize evaluation reports"), config_required=False)
    rp.add_argument("paths", nargs="*", type=Path, help="report files or directories to scan")
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s", stream=sys.stderr)
    try:
        return _dispatch(args)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (FormatError, GenerationError) as exc:
        print(f"data error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except TrainingAborted as exc:
        print(f"training aborted at {exc}", file=sys.stderr)
        return EXIT_ABORT
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_CHECKPOINT


def _dispatch(args) -> int:
    if args.command == "report":
        if args.config is not None:
            cfg = load_config(args.config, args.overrides, args.seed, args.out)
            paths, out = args.paths or [cfg.out], cfg.out
        else:
            out = args.out or Path(".")
            paths = args.paths or [out]
        out.mkdir(parents=True, exist_ok=True)
        print(run_report(paths, out))
        return EXIT_OK

    cfg = load_config(args.config, args.overrides, args.seed, args.out)
    root = cfg.out
    if args.command == "gen-data":
        for m in generate_data(cfg, root / "data"):
            print(m)
    elif args.command == "train":
        print(run_train(cfg, root / "data", root / "train"))
    elif args.command == "eval":
        print(run_eval(cfg, root / "data", root / "train", root / "eval", args.checkpoint))
    elif args.command == "sweep":
        path, code = run_sweep(cfg, root)
        print(path)
        if code:
            print("some sweep cells failed; see the status column", file=sys.stderr)
        return code
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
