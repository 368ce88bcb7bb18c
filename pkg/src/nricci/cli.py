"""Command-line pipeline driver.

Subcommands compose the full evaluation: ``train`` fits one
(architecture, regime) pair, ``attack`` labels the test split by
empirical robustness, ``curvature`` computes per-example curvature
reports for selected groups, ``analyze`` turns reports into CDF/AUC
and negative-fraction tables, and ``reproduce`` chains all of it over
every benchmark setup at desk scale.

Every command records a :class:`RunManifest` (config snapshot, seed,
tool version, per-stage outputs and wall-clock) under its run
directory, which defaults to ``runs/<hash>`` where the hash digests the
command's configuration.  Exit codes: 0 success, 2 usage or input
error, 3 numerical failure (training divergence or transport
non-convergence).  The environment variable ``NRICCI_WORKERS``
overrides the ``--workers`` flag of the parallel stages.

Config files are JSON objects whose keys are the long option names of
the target subcommand with dashes replaced by underscores; explicit
command-line flags win over config-file values.
"""

import argparse
import hashlib
import json
import os
import sys
import time
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass, field
from pathlib import Path
from typing import Dict, List, Optional, Sequence, Tuple

import numpy as np

from nricci import analysis, curvature, data_io, robustness, training
from nricci.version import __version__

EXIT_OK = 0
EXIT_USAGE = 2
EXIT_NUMERICAL = 3

# Canonical benchmark setups: architecture spec and training regime.
SETUPS: Tuple[Tuple[str, str], ...] = (
    ("15,20", "ce"),
    ("15,20", "wd"),
    ("15,20", "at"),
    ("15,25,20,15", "ce"),
    ("15,25,20,15", "wd"),
    ("15,25,20,15", "at"),
    ("cnn", "ce"),
)

DEFAULT_CURVATURE_EPS = (0.03, 0.07, 0.1, 0.2)


def arch_tag(arch: str) -> str:
    """Filesystem/reporting tag for an architecture spec."""
    if arch.strip().lower() == "cnn":
        return "cnn"
    sizes = [s.strip() for s in arch.split(",") if s.strip()]
    return "fc-" + "-".join(sizes)


def setup_id(arch: str, regime: str) -> str:
    return f"{arch_tag(arch)}-{regime}"


def _eps_tag(eps: float) -> str:
    return ("%g" % eps).replace(".", "p")


# ---------------------------------------------------------------------------
# run manifests


@dataclass
class RunManifest:
    """Everything needed to audit or rerun a pipeline invocation."""

    config: Dict
    seed: int
    tool_version: str = __version__
    stages: List[Dict] = field(default_factory=list)

    def add_stage(self, name: str, seconds: float, outputs: Sequence[str]) -> None:
        self.stages = [s for s in self.stages if s["name"] != name]
        self.stages.append(
            {"name": name, "seconds": seconds, "outputs": sorted(outputs)}
        )

    def to_dict(self) -> Dict:
        return {
            "config": self.config,
            "seed": self.seed,
            "tool_version": self.tool_version,
            "stages": self.stages,
        }

    def verify(self, run_dir: Path) -> None:
        """Check the manifest invariant: every listed output exists."""
        for stage in self.stages:
            for rel in stage["outputs"]:
                if not (run_dir / rel).exists():
                    raise FileNotFoundError(
                        f"manifest lists missing output {rel} (stage {stage['name']})"
                    )


def manifest_hash(command: str, config: Dict, seed: int) -> str:
    doc = json.dumps(
        {"command": command, "config": config, "seed": seed},
        sort_keys=True,
        separators=(",", ":"),
    )
    return hashlib.sha256(doc.encode("utf-8")).hexdigest()[:12]


def _resolve_run_dir(args, command: str, config: Dict) -> Path:
    if args.run_dir:
        run_dir = Path(args.run_dir)
    else:
        run_dir = Path("runs") / manifest_hash(command, config, config.get("seed", 0))
    run_dir.mkdir(parents=True, exist_ok=True)
    return run_dir


def _load_or_new_manifest(run_dir: Path, config: Dict, seed: int) -> RunManifest:
    path = run_dir / "manifest.json"
    if path.exists():
        doc = data_io.read_json(path)
        man = RunManifest(
            config=doc["config"],
            seed=doc["seed"],
            tool_version=doc["tool_version"],
            stages=doc["stages"],
        )
        man.config.update(config)
        man.seed = seed
        man.tool_version = __version__
        return man
    return RunManifest(config=dict(config), seed=seed)


def _commit_manifest(man: RunManifest, run_dir: Path) -> None:
    man.verify(run_dir)
    data_io.write_json(run_dir / "manifest.json", man.to_dict())


def _resolve_workers(flag_value: int) -> int:
    env = os.environ.get("NRICCI_WORKERS")
    if env is not None:
        return max(1, int(env))
    return max(1, flag_value)


def _parse_float_list(text: str) -> List[float]:
    vals = [float(t) for t in text.split(",") if t.strip()]
    if not vals:
        raise ValueError(f"empty number list: {text!r}")
    return vals


def _parse_int_list(text: str) -> List[int]:
    vals = [int(t) for t in text.split(",") if t.strip()]
    if not vals:
        raise ValueError(f"empty integer list: {text!r}")
    return vals


# ---------------------------------------------------------------------------
# train


def _train_config_from_args(args) -> training.TrainConfig:
    kwargs = dict(
        arch=args.arch,
        regime=args.regime,
        epochs=args.epochs,
        batch_size=args.batch_size,
        lr=args.lr,
        momentum=args.momentum,
        seed=args.seed,
    )
    if args.weight_decay is not None:
        kwargs["weight_decay"] = args.weight_decay
    if args.at_eps is not None:
        kwargs["at_eps"] = args.at_eps
    if args.at_steps is not None:
        kwargs["at_steps"] = args.at_steps
    if args.at_step_size is not None:
        kwargs["at_step_size"] = args.at_step_size
    if args.at_warmup is not None:
        kwargs["at_warmup_epochs"] = args.at_warmup
    return training.TrainConfig(**kwargs)


def cmd_train(args) -> int:
    cfg = _train_config_from_args(args)
    config = {
        "command": "train",
        "train": cfg.to_dict(),
        "data_dir": args.data_dir,
        "train_limit": args.train_limit,
        "seed": args.seed,
    }
    run_dir = _resolve_run_dir(args, "train", config)
    man = _load_or_new_manifest(run_dir, config, args.seed)

    data = data_io.load_mnist(args.data_dir, "train")
    images, labels = data.images, data.labels
    if args.train_limit:
        images, labels = images[: args.train_limit], labels[: args.train_limit]

    t0 = time.perf_counter()
    net, history = training.train(images, labels, cfg, log_path=run_dir / "train_log.csv")
    data_io.save_model(net, run_dir / "model.nrcm")
    seconds = time.perf_counter() - t0

    man.add_stage("train", seconds, ["model.nrcm", "train_log.csv"])
    _commit_manifest(man, run_dir)
    final = history[-1]
    print(
        f"trained {setup_id(args.arch, args.regime)}: "
        f"epochs={len(history)} train_acc={final[2]:.4f} "
        f"({seconds:.1f}s) -> {run_dir / 'model.nrcm'}"
    )
    return EXIT_OK


# ---------------------------------------------------------------------------
# attack


def _attack_chunk(model_path: str, data_dir: str, test_limit: int,
                  indices: List[int], cfg_kwargs: Dict):
    """Worker body: verdicts for one contiguous slice of the test split."""
    net = data_io.load_model(model_path)
    test = data_io.load_mnist(data_dir, "test")
    images, labels = test.images, test.labels
    if test_limit:
        images, labels = images[:test_limit], labels[:test_limit]
    idx = np.asarray(indices, dtype=np.int64)
    cfg = robustness.AttackConfig(**cfg_kwargs)
    records, _ = robustness.evaluate_grid(
        net, images[idx], labels[idx], cfg, indices=idx
    )
    return records


def run_attack(model_path, data_dir, records_path, *, eps_grid, steps,
               restarts, step_size, seed, test_limit, workers) -> List:
    """Attack the test split and write the records CSV; returns records."""
    cfg_kwargs = dict(
        eps_grid=tuple(eps_grid),
        n_steps=steps,
        n_restarts=restarts,
        step_size=step_size,
        seed=seed,
    )
    test = data_io.load_mnist(data_dir, "test")
    n = test.n if not test_limit else min(test_limit, test.n)
    all_idx = np.arange(n, dtype=np.int64)

    if workers <= 1:
        records = _attack_chunk(
            str(model_path), str(data_dir), test_limit, all_idx.tolist(), cfg_kwargs
        )
    else:
        chunks = [c.tolist() for c in np.array_split(all_idx, workers) if c.size]
        with ProcessPoolExecutor(max_workers=len(chunks)) as pool:
            futures = [
                pool.submit(_attack_chunk, str(model_path), str(data_dir),
                            test_limit, chunk, cfg_kwargs)
                for chunk in chunks
            ]
            parts = [f.result() for f in futures]
        records = [rec for part in parts for rec in part]
        records.sort(key=lambda r: r.index)

    robustness.write_records(records_path, records, eps_grid)
    return records


def _model_tag(net) -> str:
    """Reporting tag for a loaded model, from its training metadata."""
    meta = net.meta or {}
    if "setup" in meta:
        return meta["setup"]
    tc = meta.get("train_config", {})
    if "arch" in tc:
        return setup_id(tc["arch"], tc.get("regime", meta.get("regime", "ce")))
    return "model"


def _print_accuracy_row(tag: str, records, eps_grid) -> None:
    cells = [f"clean={robustness.clean_accuracy(records):.3f}"]
    for eps in eps_grid:
        cells.append(f"eps{('%g' % eps)}={robustness.robust_accuracy(records, eps):.3f}")
    print(f"{tag:24s} " + "  ".join(cells))


def cmd_attack(args) -> int:
    model_path = Path(args.model)
    if not model_path.exists():
        print(f"model file not found: {model_path}", file=sys.stderr)
        return EXIT_USAGE
    eps_grid = _parse_float_list(args.eps_grid)
    config = {
        "command": "attack",
        "model": str(model_path),
        "eps_grid": eps_grid,
        "steps": args.steps,
        "restarts": args.restarts,
        "step_size": args.step_size,
        "seed": args.seed,
        "data_dir": args.data_dir,
        "test_limit": args.test_limit,
    }
    run_dir = _resolve_run_dir(args, "attack", config)
    man = _load_or_new_manifest(run_dir, config, args.seed)
    workers = _resolve_workers(args.workers)

    t0 = time.perf_counter()
    records = run_attack(
        model_path, args.data_dir, run_dir / "records.csv",
        eps_grid=eps_grid, steps=args.steps, restarts=args.restarts,
        step_size=args.step_size, seed=args.seed,
        test_limit=args.test_limit, workers=workers,
    )
    seconds = time.perf_counter() - t0

    net = data_io.load_model(model_path)
    _print_accuracy_row(_model_tag(net), records, eps_grid)
    man.add_stage("attack", seconds, ["records.csv"])
    _commit_manifest(man, run_dir)
    return EXIT_OK


# ---------------------------------------------------------------------------
# curvature


def _curvature_example(model_path: str, data_dir: str, index: int,
                       out_csv: str, out_json: str, measure_kwargs: Dict,
                       include_bias: bool, method: str, sinkhorn_reg: float,
                       extra: Dict):
    """Worker body: one example's curvature report, written to disk."""
    net = data_io.load_model(model_path)
    test = data_io.load_mnist(data_dir, "test")
    mc = curvature.MeasureConfig(**measure_kwargs)
    report = curvature.nrc_all_edges(
        net, test.images[index], mc,
        include_bias=include_bias, method=method, sinkhorn_reg=sinkhorn_reg,
    )
    curvature.write_curvature_csv(out_csv, report)
    curvature.write_curvature_summary(out_json, report, extra=extra)
    return index, report.summary()


def run_curvature_groups(model_path, data_dir, records_path, out_dir, *,
                         setup: str, robust_eps: Sequence[float],
                         nonrobust_eps: Sequence[Optional[float]],
                         labels: Sequence[int], count: Optional[int],
                         measure_kwargs: Dict, include_bias: bool,
                         method: str, sinkhorn_reg: float,
                         workers: int) -> Dict:
    """Curvature reports for every requested (robust@ε [, nonrobust@ε'],
    label) group; returns the groups document (also written to
    ``out_dir/groups.json``)."""
    records, _ = robustness.read_records(records_path)
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    groups = []
    tasks = []
    for robust_at, nonrobust_at in zip(robust_eps, nonrobust_eps):
        for label in labels:
            indices = robustness.select_group(
                records, robust_at, nonrobust_at=nonrobust_at,
                label=label, count=count,
            )
            entry = {
                "label": int(label),
                "eps": float(robust_at),
                "robust_at": float(robust_at),
                "nonrobust_at": None if nonrobust_at is None else float(nonrobust_at),
                "examples": [],
            }
            gtag = _eps_tag(robust_at)
            if nonrobust_at is not None:
                gtag += "_non" + _eps_tag(nonrobust_at)
            for idx in indices:
                stem = f"ex{idx}_r{gtag}_l{label}"
                entry["examples"].append(
                    {"index": int(idx), "csv": f"{stem}.csv", "summary": f"{stem}.json"}
                )
                tasks.append((idx, stem, robust_at, label))
            groups.append(entry)

    def task_args(idx, stem, robust_at, label):
        extra = {"setup": setup, "example_index": int(idx),
                 "label": int(label), "eps": float(robust_at)}
        return (str(model_path), str(data_dir), int(idx),
                str(out_dir / f"{stem}.csv"), str(out_dir / f"{stem}.json"),
                measure_kwargs, include_bias, method, sinkhorn_reg, extra)

    if workers <= 1 or len(tasks) <= 1:
        for t in tasks:
            _curvature_example(*task_args(*t))
    else:
        with ProcessPoolExecutor(max_workers=min(workers, len(tasks))) as pool:
            futures = [pool.submit(_curvature_example, *task_args(*t)) for t in tasks]
            for f in futures:
                f.result()

    doc = {
        "setup": setup,
        "measure": dict(measure_kwargs),
        "include_bias": include_bias,
        "method": method,
        "groups": groups,
    }
    data_io.write_json(out_dir / "groups.json", doc)
    return doc


def cmd_curvature(args) -> int:
    model_path = Path(args.model)
    records_path = Path(args.records)
    for p, what in [(model_path, "model"), (records_path, "records")]:
        if not p.exists():
            print(f"{what} file not found: {p}", file=sys.stderr)
            return EXIT_USAGE
    robust_eps = _parse_float_list(args.robust_at)
    if args.nonrobust_at:
        nonrobust_eps = [float(t) for t in args.nonrobust_at.split(",") if t.strip()]
        if len(nonrobust_eps) == 1:
            nonrobust_eps = nonrobust_eps * len(robust_eps)
        if len(nonrobust_eps) != len(robust_eps):
            print("--nonrobust-at must have one value or match --robust-at",
                  file=sys.stderr)
            return EXIT_USAGE
    else:
        nonrobust_eps = [None] * len(robust_eps)
    labels = _parse_int_list(args.labels)

    net = data_io.load_model(model_path)
    setup = args.setup or _model_tag(net)
    config = {
        "command": "curvature",
        "model": str(model_path),
        "records": str(records_path),
        "setup": setup,
        "robust_at": robust_eps,
        "nonrobust_at": [e for e in nonrobust_eps],
        "labels": list(labels),
        "count": args.count,
        "measure": args.measure,
        "alpha": args.alpha,
        "include_bias": not args.no_bias,
        "method": args.method,
        "seed": 0,
    }
    run_dir = _resolve_run_dir(args, "curvature", config)
    man = _load_or_new_manifest(run_dir, config, 0)
    workers = _resolve_workers(args.workers)
    out_dir = run_dir / "curvature" / setup

    t0 = time.perf_counter()
    doc = run_curvature_groups(
        model_path, args.data_dir, records_path, out_dir,
        setup=setup, robust_eps=robust_eps, nonrobust_eps=nonrobust_eps,
        labels=labels, count=args.count,
        measure_kwargs={"kind": args.measure, "alpha": args.alpha},
        include_bias=not args.no_bias, method=args.method,
        sinkhorn_reg=args.sinkhorn_reg, workers=workers,
    )
    seconds = time.perf_counter() - t0

    outputs = [f"curvature/{setup}/groups.json"]
    n_examples = 0
    for g in doc["groups"]:
        for ex in g["examples"]:
            outputs.append(f"curvature/{setup}/{ex['csv']}")
            outputs.append(f"curvature/{setup}/{ex['summary']}")
            n_examples += 1
    man.add_stage(f"curvature:{setup}", seconds, outputs)
    _commit_manifest(man, run_dir)

    empties = [g for g in doc["groups"] if not g["examples"]]
    for g in empties:
        nr = "" if g["nonrobust_at"] is None else f" and nonrobust at {g['nonrobust_at']:g}"
        print(
            f"N/A: no label-{g['label']} examples robust at {g['robust_at']:g}{nr}"
        )
    print(f"curvature[{setup}]: {n_examples} example reports ({seconds:.1f}s) -> {out_dir}")
    return EXIT_OK


# ---------------------------------------------------------------------------
# analyze


def _load_group_samples(groups_doc: Dict, base_dir: Path):
    """(label, eps) -> list of per-example kappa arrays, plus example ids."""
    samples: Dict[Tuple[str, float], List[np.ndarray]] = {}
    examples: Dict[Tuple[str, float], List[int]] = {}
    for g in groups_doc["groups"]:
        key = (str(g["label"]), float(g["eps"]))
        samples.setdefault(key, [])
        examples.setdefault(key, [])
        for ex in g["examples"]:
            kappas = curvature.read_curvature_kappas(base_dir / ex["csv"])
            samples[key].append(kappas)
            examples[key].append(int(ex["index"]))
    return samples, examples


def run_analyze(group_files: Sequence[Path], out_dir: Path, *,
                bounds: Optional[Tuple[float, float]] = None,
                write_cdfs: bool = True) -> List[analysis.AucRow]:
    """Tables (and optional per-example CDF dumps) from groups documents."""
    out_dir = Path(out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)

    loaded = []
    for gf in group_files:
        gf = Path(gf)
        doc = data_io.read_json(gf)
        samples, examples = _load_group_samples(doc, gf.parent)
        loaded.append((doc["setup"], samples, examples))

    if bounds is None:
        pooled = {}
        for setup, samples, _ in loaded:
            for key, arrs in samples.items():
                pooled[(setup,) + key] = arrs
        bounds = analysis.default_bounds(pooled)

    auc_rows: List[analysis.AucRow] = []
    frac_rows: List[analysis.AucRow] = []
    for setup, samples, examples in loaded:
        auc_rows.extend(analysis.group_auc_table(setup, samples, bounds=bounds))
        frac_rows.extend(analysis.group_negative_fraction_table(setup, samples))
        if write_cdfs:
            cdf_dir = out_dir / "cdf"
            cdf_dir.mkdir(exist_ok=True)
            for (label, eps), arrs in samples.items():
                for idx, arr in zip(examples[(label, eps)], arrs):
                    cdf = analysis.empirical_cdf(arr)
                    name = f"{setup}_eps{_eps_tag(eps)}_l{label}_ex{idx}.csv"
                    analysis.write_cdf_csv(cdf, cdf_dir / name)

    analysis.write_table_csv(auc_rows, out_dir / "auc_rows.csv")
    analysis.write_table_csv(frac_rows, out_dir / "negfrac_rows.csv")
    _write_pivot(auc_rows, out_dir / "auc_table.csv")
    return auc_rows


def _write_pivot(rows: Sequence[analysis.AucRow], path) -> None:
    """Setup-by-epsilon grid of the over-labels average AUCs."""
    _check_uniform_bounds(rows)
    eps_values = sorted({r.eps for r in rows})
    setups = []
    for r in rows:
        if r.setup not in setups:
            setups.append(r.setup)
    header = ["setup"] + [("auc_eps%g" % e) for e in eps_values]
    out = []
    for s in setups:
        avg = analysis.average_rows([r for r in rows if r.setup == s])
        cells = [s]
        for e in eps_values:
            row = avg.get(e)
            if row is None or row.mean_auc is None:
                cells.append("NA")
            else:
                cells.append(row.mean_auc)
        out.append(cells)
    data_io.write_csv(path, header, out)


def _check_uniform_bounds(rows: Sequence[analysis.AucRow]) -> None:
    bounds = {(r.lo, r.hi) for r in rows}
    if len(bounds) > 1:
        raise ValueError(
            f"cannot compare rows integrated over different bounds: {sorted(bounds)}"
        )


def _assert_trend(rows: Sequence[analysis.AucRow]) -> int:
    """Nonzero exit if any fully-connected setup breaks the
    decreasing-AUC-with-epsilon trend between 0.03 and 0.1."""
    failures = 0
    checked = 0
    for setup in sorted({r.setup for r in rows}):
        if not setup.startswith("fc-"):
            continue
        avg = analysis.average_rows([r for r in rows if r.setup == setup])
        lo_row, hi_row = avg.get(0.03), avg.get(0.1)
        if lo_row is None or hi_row is None or lo_row.is_na or hi_row.is_na:
            print(f"trend[{setup}]: skipped (missing group)")
            continue
        checked += 1
        ok = hi_row.mean_auc < lo_row.mean_auc
        print(
            f"trend[{setup}]: auc(0.1)={hi_row.mean_auc:.4f} "
            f"{'<' if ok else '>='} auc(0.03)={lo_row.mean_auc:.4f} "
            f"{'ok' if ok else 'FAIL'}"
        )
        if not ok:
            failures += 1
    if checked == 0:
        print("trend: nothing to check")
    return 1 if failures else EXIT_OK


def cmd_analyze(args) -> int:
    if bool(args.groups) == bool(args.tables):
        print("analyze needs exactly one of --groups or --tables", file=sys.stderr)
        return EXIT_USAGE

    if args.tables:
        rows: List[analysis.AucRow] = []
        for t in args.tables:
            path = Path(t)
            if not path.exists():
                print(f"table not found: {path}", file=sys.stderr)
                return EXIT_USAGE
            rows.extend(analysis.read_table_csv(path))
        try:
            _check_uniform_bounds(rows)
        except ValueError as exc:
            print(str(exc), file=sys.stderr)
            return EXIT_USAGE
        if args.out_dir:
            out = Path(args.out_dir)
            out.mkdir(parents=True, exist_ok=True)
            analysis.write_table_csv(rows, out / "auc_rows.csv")
            _write_pivot(rows, out / "auc_table.csv")
        if args.assert_trend:
            return _assert_trend(rows)
        return EXIT_OK

    group_files = [Path(g) for g in args.groups]
    for gf in group_files:
        if not gf.exists():
            print(f"groups file not found: {gf}", file=sys.stderr)
            return EXIT_USAGE
    bounds = None
    if args.bounds:
        lo, hi = _parse_float_list(args.bounds)
        bounds = (lo, hi)
    config = {
        "command": "analyze",
        "groups": [str(g) for g in group_files],
        "bounds": list(bounds) if bounds else None,
        "seed": 0,
    }
    run_dir = _resolve_run_dir(args, "analyze", config)
    man = _load_or_new_manifest(run_dir, config, 0)
    out_dir = run_dir / "analysis"

    t0 = time.perf_counter()
    rows = run_analyze(group_files, out_dir, bounds=bounds,
                       write_cdfs=not args.no_cdfs)
    seconds = time.perf_counter() - t0

    outputs = ["analysis/auc_rows.csv", "analysis/negfrac_rows.csv",
               "analysis/auc_table.csv"]
    if not args.no_cdfs:
        outputs += [
            "analysis/cdf/" + p.name for p in sorted((out_dir / "cdf").glob("*.csv"))
        ]
    man.add_stage("analyze", seconds, outputs)
    _commit_manifest(man, run_dir)
    print(f"analysis tables -> {out_dir}")
    if args.assert_trend:
        return _assert_trend(rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# reproduce


def cmd_reproduce(args) -> int:
    eps_grid = _parse_float_list(args.eps_grid)
    curvature_eps = _parse_float_list(args.curvature_eps)
    labels = _parse_int_list(args.labels)
    archs = [a.strip() for a in args.archs.split(";") if a.strip()]
    setups = [(a, r) for a, r in SETUPS if a in archs]
    if not setups:
        print(f"no known setups among archs {archs!r}", file=sys.stderr)
        return EXIT_USAGE
    config = {
        "command": "reproduce",
        "archs": archs,
        "epochs": args.epochs,
        "train_limit": args.train_limit,
        "test_limit": args.test_limit,
        "eps_grid": eps_grid,
        "curvature_eps": curvature_eps,
        "labels": list(labels),
        "count": args.count,
        "cnn_count": args.cnn_count,
        "seed": args.seed,
    }
    run_dir = _resolve_run_dir(args, "reproduce", config)
    man = _load_or_new_manifest(run_dir, config, args.seed)
    workers = _resolve_workers(args.workers)

    group_files = []
    for arch, regime in setups:
        setup = setup_id(arch, regime)
        sdir = run_dir / setup
        sdir.mkdir(parents=True, exist_ok=True)
        outputs = []

        t0 = time.perf_counter()
        cfg = training.TrainConfig(
            arch=arch, regime=regime, epochs=args.epochs, seed=args.seed
        )
        data = data_io.load_mnist(args.data_dir, "train")
        images, labels_tr = data.images, data.labels
        if args.train_limit:
            images, labels_tr = images[: args.train_limit], labels_tr[: args.train_limit]
        net, history = training.train(
            images, labels_tr, cfg, log_path=sdir / "train_log.csv"
        )
        net.meta["setup"] = setup
        data_io.save_model(net, sdir / "model.nrcm")
        outputs += [f"{setup}/model.nrcm", f"{setup}/train_log.csv"]
        print(f"trained {setup}: train_acc={history[-1][2]:.4f}")

        records = run_attack(
            sdir / "model.nrcm", args.data_dir, sdir / "records.csv",
            eps_grid=eps_grid, steps=args.steps, restarts=args.restarts,
            step_size=None, seed=args.seed, test_limit=args.test_limit,
            workers=workers,
        )
        outputs.append(f"{setup}/records.csv")
        _print_accuracy_row(setup, records, eps_grid)

        count = args.cnn_count if arch == "cnn" else args.count
        if count > 0:
            doc = run_curvature_groups(
                sdir / "model.nrcm", args.data_dir, sdir / "records.csv",
                sdir / "curvature", setup=setup,
                robust_eps=curvature_eps,
                nonrobust_eps=[None] * len(curvature_eps),
                labels=labels, count=count,
                measure_kwargs={"kind": "uniform", "alpha": 0.0},
                include_bias=True, method="exact", sinkhorn_reg=0.01,
                workers=workers,
            )
            outputs.append(f"{setup}/curvature/groups.json")
            for g in doc["groups"]:
                for ex in g["examples"]:
                    outputs.append(f"{setup}/curvature/{ex['csv']}")
                    outputs.append(f"{setup}/curvature/{ex['summary']}")
            group_files.append(sdir / "curvature" / "groups.json")
        man.add_stage(f"setup:{setup}", time.perf_counter() - t0, outputs)
        _commit_manifest(man, run_dir)

    if group_files:
        t0 = time.perf_counter()
        rows = run_analyze(group_files, run_dir / "analysis", write_cdfs=not args.no_cdfs)
        outputs = ["analysis/auc_rows.csv", "analysis/negfrac_rows.csv",
                   "analysis/auc_table.csv"]
        if not args.no_cdfs:
            outputs += [
                "analysis/cdf/" + p.name
                for p in sorted((run_dir / "analysis" / "cdf").glob("*.csv"))
            ]
        man.add_stage("analyze", time.perf_counter() - t0, outputs)
        _commit_manifest(man, run_dir)
        print(f"AUC table -> {run_dir / 'analysis' / 'auc_table.csv'}")
        if args.assert_trend:
            return _assert_trend(rows)
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser


def _add_common(p: argparse.ArgumentParser) -> None:
    p.add_argument("--run-dir", default=None,
                   help="output directory (default: runs/<config hash>)")
    p.add_argument("--config", default=None,
                   help="JSON config file; keys are long option names")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="nricci",
        description="Ricci curvature analysis of neural network data graphs",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("train", help="train one (architecture, regime) model")
    p.add_argument("--arch", required=True,
                   help='layer widths like "15,20", or "cnn"')
    p.add_argument("--regime", default="ce", choices=sorted(training.REGIMES))
    p.add_argument("--epochs", type=int, default=20)
    p.add_argument("--batch-size", type=int, default=128)
    p.add_argument("--lr", type=float, default=0.05)
    p.add_argument("--momentum", type=float, default=0.9)
    p.add_argument("--weight-decay", type=float, default=None)
    p.add_argument("--at-eps", type=float, default=None)
    p.add_argument("--at-steps", type=int, default=None)
    p.add_argument("--at-step-size", type=float, default=None)
    p.add_argument("--at-warmup", type=int, default=None,
                   help="AT epsilon warmup epochs (default 2 under --regime at)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", default="data/mnist")
    p.add_argument("--train-limit", type=int, default=0,
                   help="use only the first N training examples (0 = all)")
    _add_common(p)
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("attack", help="label the test split by PGD robustness")
    p.add_argument("--model", required=True)
    p.add_argument("--eps-grid", default="0.03,0.05,0.07,0.1,0.2")
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--step-size", type=float, default=None)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", default="data/mnist")
    p.add_argument("--test-limit", type=int, default=0)
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_attack)

    p = sub.add_parser("curvature", help="curvature reports for example groups")
    p.add_argument("--model", required=True)
    p.add_argument("--records", required=True)
    p.add_argument("--robust-at", required=True,
                   help="comma list of budgets the examples must be robust at")
    p.add_argument("--nonrobust-at", default=None,
                   help="optional budgets the examples must be NON-robust at")
    p.add_argument("--labels", default="0,1,2,3,4,5,6,7,8,9")
    p.add_argument("--count", type=int, default=70,
                   help="examples per (label, budget) group")
    p.add_argument("--setup", default=None,
                   help="setup id recorded in outputs (default: model metadata)")
    p.add_argument("--measure", default="uniform", choices=["uniform", "exponential"])
    p.add_argument("--alpha", type=float, default=0.0)
    p.add_argument("--no-bias", action="store_true",
                   help="build data graphs without the bias virtual input")
    p.add_argument("--method", default="exact", choices=["exact", "sinkhorn"])
    p.add_argument("--sinkhorn-reg", type=float, default=0.01)
    p.add_argument("--data-dir", default="data/mnist")
    p.add_argument("--workers", type=int, default=1)
    _add_common(p)
    p.set_defaults(func=cmd_curvature)

    p = sub.add_parser("analyze", help="CDF/AUC/negative-fraction tables")
    p.add_argument("--groups", nargs="*", default=[],
                   help="groups.json files produced by the curvature command")
    p.add_argument("--tables", nargs="*", default=[],
                   help="merge existing AUC row tables instead of raw groups")
    p.add_argument("--bounds", default=None,
                   help='integration bounds "lo,hi" (default: derived)')
    p.add_argument("--no-cdfs", action="store_true",
                   help="skip the per-example CDF dumps")
    p.add_argument("--assert-trend", action="store_true",
                   help="exit nonzero unless AUC(0.1) < AUC(0.03) for FC setups")
    p.add_argument("--out-dir", default=None,
                   help="(tables mode) where to write the merged tables")
    _add_common(p)
    p.set_defaults(func=cmd_analyze)

    p = sub.add_parser("reproduce",
                       help="train/attack/curvature/analyze every benchmark setup")
    p.add_argument("--archs", default="15,20;15,25,20,15;cnn",
                   help="semicolon-separated architecture specs to include")
    p.add_argument("--epochs", type=int, default=8)
    p.add_argument("--train-limit", type=int, default=20000)
    p.add_argument("--test-limit", type=int, default=2000)
    p.add_argument("--eps-grid", default="0.03,0.05,0.07,0.1,0.2")
    p.add_argument("--curvature-eps", default="0.03,0.07,0.1,0.2")
    p.add_argument("--labels", default="0,1")
    p.add_argument("--count", type=int, default=2,
                   help="examples per (label, budget) group for dense models")
    p.add_argument("--cnn-count", type=int, default=1,
                   help="examples per group for the CNN (0 skips its curvature)")
    p.add_argument("--steps", type=int, default=40)
    p.add_argument("--restarts", type=int, default=3)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--data-dir", default="data/mnist")
    p.add_argument("--workers", type=int, default=1)
    p.add_argument("--no-cdfs", action="store_true")
    p.add_argument("--assert-trend", action="store_true")
    _add_common(p)
    p.set_defaults(func=cmd_reproduce)

    return parser


def _apply_config_file(parser, argv):
    """Respect --config by injecting file values as parser defaults."""
    probe = argparse.ArgumentParser(add_help=False)
    probe.add_argument("--config", default=None)
    known, _ = probe.parse_known_args(argv)
    if not known.config:
        return
    doc = data_io.read_json(known.config)
    if not isinstance(doc, dict):
        raise ValueError(f"config file must hold a JSON object: {known.config}")
    for action in parser._subparsers._group_actions:  # noqa: SLF001
        for sub_parser in action.choices.values():
            valid = {a.dest for a in sub_parser._actions}  # noqa: SLF001
            sub_parser.set_defaults(**{k: v for k, v in doc.items() if k in valid})


def main(argv: Optional[Sequence[str]] = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        _apply_config_file(parser, argv)
        args = parser.parse_args(argv)
        return args.func(args)
    except (training.TrainingDiverged, curvature.TransportFailure) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE
    except ValueError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_USAGE


if __name__ == "__main__":
    sys.exit(main())
