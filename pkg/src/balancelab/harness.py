"""Config-driven experiment runner: seeded runs, sweeps, comparison tables.

Every run is one (method, seed) cell. A cell derives four independent
generator seeds (data, split, init, train) from the pair (master seed, run
seed), executes the full pipeline, and produces one report row:

    method, seed, sweep_param, sweep_value, acc, macro_f1,
    phi_1..phi_m, imbalance, flops_total, best_epoch

Completed cells are written to ``<out>/cells/`` immediately, so partial
results survive interruption and finished sweeps resume without recomputing.
Reports serialize to CSV and JSON with no timestamps (those go to the
``run.log`` sidecar), so identical configs reproduce identical bytes.
"""

from __future__ import annotations

import json
import os
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field

import numpy as np

from . import datagen, fusion, metrics, trainer
from .config import ExperimentConfig, parse_config_text
from .errors import BalanceLabError, ConfigError
from .methods import CATEGORY, METHOD_KINDS, MethodSpec

_VERSION = "0.1.0"

_SWEEPABLE = ("w_uni", "scale", "kl_weight", "alpha", "rho_mask", "p_max", "tau")

_CATEGORY_ORDER = ("baseline", "objective", "optimization", "feed-forward", "data")


@dataclass
class RunRow:
    method: str
    seed: object  # run seed, or "mean"/"std" on aggregate rows
    sweep_param: str = ""
    sweep_value: float | None = None
    acc: float = 0.0
    macro_f1: float = 0.0
    phi: tuple[float, ...] | None = None
    imbalance: float | None = None
    flops_total: float = 0
    best_epoch: float = -1

    def to_dict(self) -> dict:
        return {
            "method": self.method,
            "seed": self.seed,
            "sweep_param": self.sweep_param,
            "sweep_value": self.sweep_value,
            "acc": self.acc,
            "macro_f1": self.macro_f1,
            "phi": list(self.phi) if self.phi is not None else None,
            "imbalance": self.imbalance,
            "flops_total": self.flops_total,
            "best_epoch": self.best_epoch,
        }

    @staticmethod
    def from_dict(d: dict) -> "RunRow":
        return RunRow(
            d["method"],
            d["seed"],
            d.get("sweep_param", ""),
            d.get("sweep_value"),
            d["acc"],
            d["macro_f1"],
            tuple(d["phi"]) if d.get("phi") is not None else None,
            d.get("imbalance"),
            d["flops_total"],
            d["best_epoch"],
        )


@dataclass
class RunReport:
    rows: list[RunRow]
    aggregates: list[RunRow]
    m: int
    config: ExperimentConfig
    sweep_param: str = ""
    balance_points: dict | None = None
    errors: list[dict] = field(default_factory=list)

    def csv_text(self) -> str:
        cols = ["method", "seed", "sweep_param", "sweep_value", "acc", "macro_f1"]
        cols += [f"phi_{i + 1}" for i in range(self.m)]
        cols += ["imbalance", "flops_total", "best_epoch"]
        lines = [",".join(cols)]

        def fmt(v) -> str:
            if v is None:
                return ""
            if isinstance(v, float):
                return repr(v)
            return str(v)

        for row in self.rows + self.aggregates:
            cells = [row.method, str(row.seed), row.sweep_param, fmt(row.sweep_value),
                     fmt(row.acc), fmt(row.macro_f1)]
            phi = row.phi if row.phi is not None else (None,) * self.m
            cells += [fmt(p) for p in phi]
            cells += [fmt(row.imbalance), fmt(row.flops_total), fmt(row.best_epoch)]
            lines.append(",".join(cells))
        return "\n".join(lines) + "\n"

    def json_dict(self) -> dict:
        agg = []
        markers = self._markers()
        for row in self.aggregates:
            d = row.to_dict()
            d["marker"] = markers.get((row.method, row.sweep_value, row.seed), [])
            agg.append(d)
        return {
            "version": _VERSION,
            "config": self.config.to_dict(),
            "sweep_param": self.sweep_param,
            "rows": [r.to_dict() for r in self.rows],
            "aggregates": agg,
            "balance_points": self.balance_points,
            "errors": self.errors,
        }

    def _markers(self) -> dict:
        out: dict = {}
        if self.balance_points:
            absol = self.balance_points.get("absolute")
            rel = self.balance_points.get("relative")
            for row in self.aggregates:
                if row.seed != "mean":
                    continue
                tags = []
                if absol is not None and row.sweep_value == absol["sweep_value"]:
                    tags.append("argmin_imbalance")
                if rel is not None and row.sweep_value == rel["sweep_value"]:
                    tags.append("argmax_accuracy")
                if tags:
                    out[(row.method, row.sweep_value, row.seed)] = tags
        return out

    def write(self, out_dir) -> None:
        os.makedirs(out_dir, exist_ok=True)
        with open(os.path.join(out_dir, "report.csv"), "w", encoding="ascii") as fh:
            fh.write(self.csv_text())
        with open(os.path.join(out_dir, "report.json"), "w", encoding="ascii") as fh:
            json.dump(self.json_dict(), fh, indent=2, sort_keys=True)
            fh.write("\n")


def _log(out_dir, message: str) -> None:
    """Timestamped progress lines go to a sidecar, never into reports."""
    if out_dir is None:
        return
    os.makedirs(out_dir, exist_ok=True)
    stamp = time.strftime("%Y-%m-%d %H:%M:%S")
    with open(os.path.join(out_dir, "run.log"), "a", encoding="utf-8") as fh:
        fh.write(f"[{stamp}] {message}\n")


def derived_seeds(master_seed: int, run_seed: int) -> tuple[int, int, int, int]:
    """Four independent seeds (data, split, init, train) for one run."""
    ss = np.random.SeedSequence([master_seed, run_seed])
    return tuple(int(x) for x in ss.generate_state(4))


def load_run_data(cfg: ExperimentConfig, data_seed: int) -> datagen.Dataset:
    if cfg.dataset_path is not None:
        return datagen.load(cfg.dataset_path)
    return datagen.generate(cfg.synthetic_spec(seed=data_seed))


def run_single(
    cfg: ExperimentConfig,
    run_seed: int,
    method: MethodSpec | None = None,
    checkpoint_path=None,
) -> RunRow:
    """Execute one (method, seed) cell and return its report row."""
    if method is None:
        method = cfg.method_spec()
    data_seed, split_seed, init_seed, train_seed = derived_seeds(cfg.master_seed, run_seed)
    data = load_run_data(cfg, data_seed)
    train_set, val_set, test_set = datagen.split(data, cfg.fractions, split_seed)
    model = fusion.init_model(cfg.arch(data.dims), data.num_classes, init_seed)
    ledger = metrics.FlopsLedger()
    best, log = trainer.fit(
        (train_set, val_set), model, cfg.train_config(seed=train_seed), method, ledger
    )
    if checkpoint_path is not None:
        fusion.save_model(best, checkpoint_path)
    perf = metrics.evaluate_performance(best, test_set)
    phi = None
    imb = None
    if cfg.shapley_enabled:
        rep = metrics.shapley(best, test_set)
        phi = tuple(float(p) for p in rep.phi)
        imb = rep.imbalance
    return RunRow(
        method=method.kind,
        seed=run_seed,
        acc=perf.accuracy,
        macro_f1=perf.macro_f1,
        phi=phi,
        imbalance=imb,
        flops_total=ledger.total,
        best_epoch=log.best_epoch,
    )


def _value_tag(value) -> str:
    if value is None:
        return "none"
    return repr(float(value)).replace(".", "p").replace("-", "m")


def _cell_path(out_dir, method_kind: str, run_seed: int, sweep_value) -> str:
    return os.path.join(
        out_dir, "cells", f"{method_kind}__seed{run_seed}__{_value_tag(sweep_value)}.json"
    )


def _cell_worker(payload: tuple) -> dict:
    """Top-level worker so cells can run in a process pool."""
    cfg_text, run_seed, sweep_param, sweep_value, ckpt_dir = payload
    cfg = parse_config_text(cfg_text)
    method = cfg.method_spec()
    if sweep_param:
        field_name = sweep_param.split(".", 1)[1]
        method = MethodSpec(**{**_method_kwargs(method), field_name: sweep_value})
    ckpt_path = None
    if ckpt_dir is not None:
        os.makedirs(ckpt_dir, exist_ok=True)
        ckpt_path = os.path.join(ckpt_dir, f"ckpt_{method.kind}_seed{run_seed}.mmck")
    row = run_single(cfg, run_seed, method, checkpoint_path=ckpt_path)
    row.sweep_param = sweep_param
    row.sweep_value = sweep_value
    return row.to_dict()


def _method_kwargs(spec: MethodSpec) -> dict:
    return {
        "kind": spec.kind,
        "w_uni": spec.w_uni,
        "scale": spec.scale,
        "kl_weight": spec.kl_weight,
        "alpha": spec.alpha,
        "rho_mask": spec.rho_mask,
        "p_max": spec.p_max,
        "tau": spec.tau,
    }


def _aggregate(rows: list[RunRow], m: int) -> list[RunRow]:
    """Mean and population-std rows per (method, sweep_value) group."""
    groups: list[tuple[str, float | None]] = []
    by_group: dict[tuple[str, float | None], list[RunRow]] = {}
    for row in rows:
        key = (row.method, row.sweep_value)
        if key not in by_group:
            by_group[key] = []
            groups.append(key)
        by_group[key].append(row)

    out = []
    for key in groups:
        members = by_group[key]
        have_phi = all(r.phi is not None for r in members)
        for stat, fn in (("mean", np.mean), ("std", np.std)):
            phi = None
            imb = None
            if have_phi:
                phi = tuple(
                    float(fn([r.phi[i] for r in members])) for i in range(m)
                )
                imb = float(fn([r.imbalance for r in members]))
            out.append(
                RunRow(
                    method=key[0],
                    seed=stat,
                    sweep_param=members[0].sweep_param,
                    sweep_value=key[1],
                    acc=float(fn([r.acc for r in members])),
                    macro_f1=float(fn([r.macro_f1 for r in members])),
                    phi=phi,
                    imbalance=imb,
                    flops_total=float(fn([r.flops_total for r in members])),
                    best_epoch=float(fn([r.best_epoch for r in members])),
                )
            )
    return out


def _run_cells(
    cfg: ExperimentConfig,
    cells: list[tuple[int, float | None]],
    sweep_param: str,
    out_dir,
    jobs: int,
    errors: list[dict],
    ckpt_dir=None,
) -> list[RunRow]:
    """Run (seed, value) cells, reusing completed cell files when present."""
    cfg_text = cfg.to_text()
    method_kind = cfg.get("method.kind")
    rows: dict[tuple[int, float | None], RunRow] = {}
    todo = []
    for run_seed, value in cells:
        if out_dir is not None:
            path = _cell_path(out_dir, method_kind, run_seed, value)
            if os.path.exists(path):
                with open(path, "r", encoding="ascii") as fh:
                    rows[(run_seed, value)] = RunRow.from_dict(json.load(fh))
                _log(out_dir, f"reused cell {method_kind} seed={run_seed} value={value}")
                continue
        todo.append((run_seed, value))

    def finish(key, row_dict):
        row = RunRow.from_dict(row_dict)
        rows[key] = row
        if out_dir is not None:
            path = _cell_path(out_dir, method_kind, key[0], key[1])
            os.makedirs(os.path.dirname(path), exist_ok=True)
            with open(path, "w", encoding="ascii") as fh:
                json.dump(row_dict, fh, indent=2, sort_keys=True)
                fh.write("\n")
            _log(out_dir, f"finished cell {method_kind} seed={key[0]} value={key[1]}")

    payloads = {key: (cfg_text, key[0], sweep_param, key[1], ckpt_dir) for key in todo}
    if jobs > 1 and len(todo) > 1:
        with ProcessPoolExecutor(max_workers=jobs) as pool:
            futures = {key: pool.submit(_cell_worker, payloads[key]) for key in todo}
            for key, fut in futures.items():
                try:
                    finish(key, fut.result())
                except Exception as exc:  # noqa: BLE001 - per-seed isolation
                    errors.append({"seed": key[0], "sweep_value": key[1], "error": str(exc)})
                    _log(out_dir, f"cell failed seed={key[0]} value={key[1]}: {exc}")
    else:
        for key in todo:
            try:
                finish(key, _cell_worker(payloads[key]))
            except Exception as exc:  # noqa: BLE001 - per-seed isolation
                errors.append({"seed": key[0], "sweep_value": key[1], "error": str(exc)})
                _log(out_dir, f"cell failed seed={key[0]} value={key[1]}: {exc}")

    return [rows[key] for key in cells if key in rows]


def _dataset_m(cfg: ExperimentConfig) -> int:
    if cfg.dataset_path is not None:
        return datagen.load(cfg.dataset_path).num_modalities
    return cfg.get("dataset.modalities")


def run_experiment(
    cfg: ExperimentConfig, out_dir=None, jobs: int = 1, save_checkpoints: bool = False
) -> RunReport:
    """Run the configured method over every seed; write report.csv/.json."""
    errors: list[dict] = []
    cells = [(s, None) for s in cfg.seeds]
    ckpt_dir = out_dir if (save_checkpoints and out_dir is not None) else None
    rows = _run_cells(cfg, cells, "", out_dir, jobs, errors, ckpt_dir=ckpt_dir)
    m = _dataset_m(cfg)
    report = RunReport(rows, _aggregate(rows, m), m, cfg, errors=errors)
    if out_dir is not None:
        report.write(out_dir)
    if not rows:
        raise BalanceLabError(f"all {len(cells)} runs failed: {errors}")
    return report


def run_sweep(
    cfg: ExperimentConfig,
    param_path: str,
    values: list[float],
    out_dir=None,
    jobs: int = 1,
) -> RunReport:
    """One run per (value, seed); marks the argmin-imbalance and
    argmax-accuracy settings among the per-value means."""
    parts = param_path.split(".")
    if len(parts) != 2 or parts[0] != "method" or parts[1] not in _SWEEPABLE:
        raise ConfigError(
            f"sweep parameter must be method.<{'|'.join(_SWEEPABLE)}>, got {param_path!r}"
        )
    if not values:
        raise ConfigError("need at least one sweep value")
    values = [float(v) for v in values]

    errors: list[dict] = []
    cells = [(s, v) for v in values for s in cfg.seeds]
    rows = _run_cells(cfg, cells, param_path, out_dir, jobs, errors)
    m = _dataset_m(cfg)
    aggregates = _aggregate(rows, m)

    means = [r for r in aggregates if r.seed == "mean"]
    balance_points = None
    if means:
        with_imb = [r for r in means if r.imbalance is not None]
        balance_points = {}
        if with_imb:
            best_imb = min(with_imb, key=lambda r: (r.imbalance, values.index(r.sweep_value)))
            balance_points["absolute"] = {
                "sweep_value": best_imb.sweep_value,
                "imbalance": best_imb.imbalance,
            }
        best_acc = max(means, key=lambda r: (r.acc, -values.index(r.sweep_value)))
        balance_points["relative"] = {"sweep_value": best_acc.sweep_value, "acc": best_acc.acc}

    report = RunReport(
        rows, aggregates, m, cfg, sweep_param=param_path,
        balance_points=balance_points, errors=errors,
    )
    if out_dir is not None:
        report.write(out_dir)
    if not rows:
        raise BalanceLabError(f"all {len(cells)} runs failed: {errors}")
    return report


def _method_order(kinds: list[str]) -> list[str]:
    ordered = []
    for cat in _CATEGORY_ORDER:
        for kind in METHOD_KINDS:
            if CATEGORY[kind] == cat and kind in kinds and kind not in ordered:
                ordered.append(kind)
    return ordered


def compare_table(reports: list[RunReport]) -> tuple[str, str]:
    """Cross-method comparison from the reports' per-method mean rows.

    Rows are ordered Baseline first, then by adjustment strategy (objective,
    optimization, feed-forward, data). Best and second-best per column are
    marked with ``*`` and ``+``. Returns (aligned_text, csv_text).
    """
    if not reports:
        raise ConfigError("need at least one report")
    ds0 = {k: v for k, v in reports[0].config.to_dict().items() if k.startswith("dataset.")}
    for rep in reports[1:]:
        ds = {k: v for k, v in rep.config.to_dict().items() if k.startswith("dataset.")}
        if ds != ds0:
            raise ConfigError("reports were produced on different dataset specs")

    by_method: dict[str, RunRow] = {}
    for rep in reports:
        for row in rep.aggregates:
            if row.seed == "mean" and row.method not in by_method:
                by_method[row.method] = row
    kinds = _method_order(list(by_method))

    def ranks(values, reverse):
        """Indices of best and second-best (None when unavailable)."""
        pairs = [(v, i) for i, v in enumerate(values) if v is not None]
        pairs.sort(key=lambda t: (-t[0] if reverse else t[0], t[1]))
        best = pairs[0][1] if pairs else None
        second = pairs[1][1] if len(pairs) > 1 else None
        return best, second

    accs = [by_method[k].acc for k in kinds]
    f1s = [by_method[k].macro_f1 for k in kinds]
    imbs = [by_method[k].imbalance for k in kinds]
    flops = [by_method[k].flops_total for k in kinds]
    marks: dict[tuple[int, int], str] = {}
    for col, (vals, reverse) in enumerate(
        ((accs, True), (f1s, True), (imbs, False), (flops, False))
    ):
        best, second = ranks(vals, reverse)
        if best is not None:
            marks[(best, col)] = "*"
        if second is not None:
            marks[(second, col)] = "+"

    header = ["method", "category", "acc", "macro_f1", "imbalance", "flops"]
    table_rows = [header]
    csv_lines = [",".join(header)]
    for i, kind in enumerate(kinds):
        row = by_method[kind]

        def cell(value, col, ndigits=4):
            if value is None:
                return "-"
            s = f"{value:.{ndigits}f}" if col < 3 else f"{value:.3g}"
            return s + marks.get((i, col), "")

        cells = [
            kind,
            CATEGORY[kind],
            cell(row.acc, 0),
            cell(row.macro_f1, 1),
            cell(row.imbalance, 2),
            cell(float(row.flops_total), 3),
        ]
        table_rows.append(cells)
        csv_lines.append(",".join(cells))

    widths = [max(len(r[c]) for r in table_rows) for c in range(len(header))]
    lines = []
    for r, cells in enumerate(table_rows):
        lines.append("  ".join(c.ljust(widths[j]) for j, c in enumerate(cells)).rstrip())
        if r == 0:
            lines.append("  ".join("-" * w for w in widths))
    return "\n".join(lines) + "\n", "\n".join(csv_lines) + "\n"


def load_report(path) -> RunReport:
    """Rebuild a RunReport from a report.json file."""
    with open(path, "r", encoding="ascii") as fh:
        d = json.load(fh)
    cfg_pairs = []
    from .config import _SCHEMA  # canonical key order

    for key, (kind, default) in _SCHEMA.items():
        v = d["config"].get(key, default)
        if isinstance(v, list):
            v = tuple(v)
        cfg_pairs.append((key, v))
    cfg = ExperimentConfig(tuple(cfg_pairs))
    rows = [RunRow.from_dict(r) for r in d["rows"]]
    aggregates = [RunRow.from_dict(r) for r in d["aggregates"]]
    m = len(rows[0].phi) if rows and rows[0].phi else cfg.get("dataset.modalities")
    return RunReport(
        rows, aggregates, m, cfg,
        sweep_param=d.get("sweep_param", ""),
        balance_points=d.get("balance_points"),
        errors=d.get("errors", []),
    )
