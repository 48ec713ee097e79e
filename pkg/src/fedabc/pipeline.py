"""End-to-end experiment stages: generate, prepare, run, aggregate.

Each stage reads and writes plain files (CSV data, JSON manifests,
JSON-lines message log, text and JSON reports) so stages can be re-run in
isolation. One master seed fans out into named per-component streams;
identical config plus seed yields byte-identical posterior and report
files.
"""

from __future__ import annotations

import json
import logging
import threading
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from .abc_engine import AbcResult
from .config import ExperimentConfig
from .dataprep import (
    Dataset,
    SitePartition,
    SiteSplit,
    StandardizationStats,
    SyntheticSpec,
    correlation_filter,
    load_csv,
    mixture_components_for,
    partition_by_assignment,
    partition_sites,
    prepare_partition,
    save_csv,
    synth_generate,
)
from .errors import ConfigError, FedAbcError
from .evaluation import ClassifierConfig, MetricsReport, SiteEvalData, run_conditions
from .federation import (
    FederationServer,
    GmmPrior,
    InProcessTransport,
    MessageLog,
    ServerConfig,
    SiteResult,
    SiteTrainingConfig,
    TcpListener,
    posterior_oversample,
    run_site,
    tcp_connect,
)
from .gmm import GmmParams
from .moae import AdamConfig, LossWeights, encode, init_moae, train_moae
from .rng import RngHandle
from .samplers import DirichletAlpha, NiwHyper
from .discrepancy import HistogramSpec

logger = logging.getLogger(__name__)

DATA_CSV = "data.csv"
DATA_MANIFEST = "dataset_manifest.json"
PREPARED_DIR = "prepared"
PREPARED_MANIFEST = "manifest.json"
POSTERIOR_FILE = "posterior.json"
MESSAGES_FILE = "messages.jsonl"
REPORT_JSON = "report.json"
REPORT_TEXT = "report.txt"
RESOLVED_CONFIG = "resolved_config.json"


# Named streams off the master seed; components can be re-run in isolation.
class Streams:
    DATA = 1
    PARTITION = 2
    SITES = 3
    SERVER = 4
    OVERSAMPLE = 5
    GLOBAL_MODEL = 6
    EVALUATION = 7

    def __init__(self, seed: int):
        self.master = RngHandle(seed)

    def data(self) -> RngHandle:
        return self.master.child(self.DATA)

    def partition(self) -> RngHandle:
        return self.master.child(self.PARTITION)

    def site(self, site_id: int) -> RngHandle:
        return self.master.child(self.SITES).child(site_id)

    def server(self) -> RngHandle:
        return self.master.child(self.SERVER)

    def oversample(self, site_id: int) -> RngHandle:
        return self.master.child(self.OVERSAMPLE).child(site_id)

    def global_model(self) -> RngHandle:
        return self.master.child(self.GLOBAL_MODEL)

    def evaluation(self) -> RngHandle:
        return self.master.child(self.EVALUATION)


def _write_json(path: Path, doc) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        json.dump(doc, fh, indent=2, sort_keys=True)
        fh.write("\n")


# -- gen-data ---------------------------------------------------------------


def generate_data(config: ExperimentConfig, out_dir: Path) -> Path:
    """Synthesize the dataset; writes CSV plus a manifest with the
    ground-truth site assignment."""
    if config.data.source != "synthetic":
        raise ConfigError("generate_data requires data.source = synthetic")
    out_dir.mkdir(parents=True, exist_ok=True)
    spec = SyntheticSpec(
        site_profile=tuple(tuple(p) for p in config.data.site_profile),
        n_features=config.data.n_features,
        margin=config.data.margin,
        site_shift=config.data.site_shift,
        informative_features=config.data.informative_features,
    )
    streams = Streams(config.seed)
    data, assignment = synth_generate(spec, streams.data())
    save_csv(out_dir / DATA_CSV, data, label_column=config.data.label_column)
    manifest = {
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "n_rows": data.n_rows,
        "n_features": data.n_features,
        "site_assignment": assignment.tolist(),
        "site_profile": [list(p) for p in spec.site_profile],
        "margin": spec.margin,
        "site_shift": spec.site_shift,
    }
    _write_json(out_dir / DATA_MANIFEST, manifest)
    return out_dir / DATA_CSV


# -- prepare ----------------------------------------------------------------


def prepare_data(config: ExperimentConfig, out_dir: Path) -> Path:
    """Filter, partition, split, standardize; one CSV per site per split."""
    out_dir.mkdir(parents=True, exist_ok=True)
    if config.data.source == "csv":
        data_path = Path(config.data.csv_path)
    else:
        data_path = out_dir / DATA_CSV
    if not data_path.exists():
        raise FileNotFoundError(f"dataset not found at {data_path}; run gen-data first")
    data = load_csv(data_path, label_column=config.data.label_column)

    kept = correlation_filter(data.x, config.prepare.correlation_threshold)
    filtered = Dataset(
        data.x[:, kept], data.y, [data.feature_names[j] for j in kept]
    )

    streams = Streams(config.seed)
    assignment = None
    manifest_path = data_path.parent / DATA_MANIFEST
    if config.prepare.partition == "manifest" and manifest_path.exists():
        with open(manifest_path, encoding="utf-8") as fh:
            assignment = np.asarray(json.load(fh)["site_assignment"], dtype=int)
    if assignment is not None:
        site_datasets = partition_by_assignment(filtered, assignment)
    else:
        profile = tuple(tuple(p) for p in config.data.site_profile)
        site_datasets = partition_sites(filtered, profile, streams.partition())

    partition = prepare_partition(site_datasets, config.prepare.train_frac, streams.partition().child(1))

    prepared = out_dir / PREPARED_DIR
    prepared.mkdir(parents=True, exist_ok=True)
    site_docs = []
    for i, split in enumerate(partition.sites):
        save_csv(prepared / f"site{i}_train.csv", split.train, config.data.label_column)
        save_csv(prepared / f"site{i}_test.csv", split.test, config.data.label_column)
        major, minor = split.train.class_counts()
        site_docs.append(
            {
                "site": i,
                "train_counts": [major, minor],
                "test_counts": list(split.test.class_counts()),
                "standardization": split.stats.to_json(),
            }
        )
    manifest = {
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "kept_columns": kept,
        "kept_feature_names": filtered.feature_names,
        "train_frac": config.prepare.train_frac,
        "sites": site_docs,
        "minority_train_total": partition.minority_train_total,
        "mixture_components_rule": mixture_components_for(partition.minority_train_total),
    }
    _write_json(prepared / PREPARED_MANIFEST, manifest)
    return prepared


def load_prepared(out_dir: Path, label_column: str = "label") -> tuple[SitePartition, dict]:
    prepared = out_dir / PREPARED_DIR
    manifest_path = prepared / PREPARED_MANIFEST
    if not manifest_path.exists():
        raise FileNotFoundError(f"prepared partition not found at {prepared}; run prepare first")
    with open(manifest_path, encoding="utf-8") as fh:
        manifest = json.load(fh)
    sites = []
    for doc in manifest["sites"]:
        i = doc["site"]
        train = load_csv(prepared / f"site{i}_train.csv", label_column)
        test = load_csv(prepared / f"site{i}_test.csv", label_column)
        stats = StandardizationStats(
            mean=np.asarray(doc["standardization"]["mean"]),
            scale=np.asarray(doc["standardization"]["scale"]),
            guarded=list(doc["standardization"]["guarded"]),
        )
        sites.append(SiteSplit(train=train, test=test, stats=stats))
    return SitePartition(sites=sites), manifest


# -- run --------------------------------------------------------------------


@dataclass
class RunArtifacts:
    result: AbcResult
    report: MetricsReport
    site_results: dict[int, SiteResult] = field(default_factory=dict)
    epsilon: float = float("nan")


def _site_training_config(config: ExperimentConfig) -> SiteTrainingConfig:
    m = config.moae
    h = config.histogram
    return SiteTrainingConfig(
        latent_dim=m.latent_dim,
        hidden=tuple(m.hidden),
        epochs=m.epochs,
        batch_size=m.batch_size,
        adam=AdamConfig(lr=m.lr, beta1=m.beta1, beta2=m.beta2, eps=m.eps),
        loss_weights=LossWeights(alpha=m.alpha, beta=m.beta),
        histogram=HistogramSpec(bins=h.bins, lo=h.lo, hi=h.hi, epsilon=h.epsilon),
    )


def _build_prior(config: ExperimentConfig, n_components: int) -> GmmPrior:
    p = config.prior
    d = config.moae.latent_dim
    nu = p.nu if p.nu is not None else d + 2.0
    return GmmPrior(
        alpha=DirichletAlpha(np.full(n_components, p.alpha)),
        niw=NiwHyper(m=np.zeros(d), kappa=p.kappa, psi=p.psi_scale * np.eye(d), nu=nu),
    )


def run_experiment(config: ExperimentConfig, out_dir: Path) -> RunArtifacts:
    """Train sites, infer the posterior, oversample, evaluate, write files."""
    out_dir = Path(out_dir)
    partition, manifest = load_prepared(out_dir, config.data.label_column)
    n_sites = len(partition.sites)
    n_components = config.mixture_components or mixture_components_for(
        partition.minority_train_total
    )
    streams = Streams(config.seed)
    site_cfg = _site_training_config(config)
    prior = _build_prior(config, n_components)
    fed = config.federation
    server_cfg = ServerConfig(
        n_sites=n_sites,
        prior=prior,
        epsilon=fed.epsilon,
        target_accepted=fed.target_accepted,
        max_trials=fed.max_trials,
        pilot_trials=fed.pilot_trials,
        pilot_quantile=fed.pilot_quantile,
        retry_budget=fed.retry_budget,
        timeout=fed.timeout,
    )

    if fed.transport == "tcp":
        host, port = fed.listen_address()
        listener = TcpListener(host, port)
        bound_host, bound_port = listener.address
        acceptor = listener

        def make_channel():
            return tcp_connect(bound_host, bound_port, timeout=fed.timeout)

    else:
        hub = InProcessTransport()
        acceptor = hub
        make_channel = hub.connect

    site_results: dict[int, SiteResult] = {}
    site_errors: list[Exception] = []

    def site_main(site_id: int, split: SiteSplit):
        try:
            channel = make_channel()
            site_results[site_id] = run_site(
                site_id,
                split.train.x,
                split.train.y,
                site_cfg,
                channel,
                streams.site(site_id),
                timeout=fed.timeout,
            )
        except Exception as exc:
            site_errors.append(exc)

    threads = [
        threading.Thread(target=site_main, args=(i, split), name=f"site-{i}")
        for i, split in enumerate(partition.sites)
    ]
    for t in threads:
        t.start()

    log = MessageLog()
    server = FederationServer(server_cfg, acceptor, streams.server(), log=log)
    try:
        server.wait_for_sites()
        result = server.infer_posterior()
        if result.accepted:
            deliveries = {}
            for i, split in enumerate(partition.sites):
                major, minor = split.train.class_counts()
                deliveries[i] = posterior_oversample(
                    result.accepted, max(0, major - minor), streams.oversample(i)
                )
            server.deliver_samples(deliveries)
        server.shutdown()
    finally:
        for t in threads:
            t.join(timeout=fed.timeout)
        if fed.transport == "tcp":
            acceptor.close()
    if site_errors:
        raise site_errors[0]

    # global encoder on pooled per-site-standardized training rows
    pooled_x = np.vstack([s.train.x for s in partition.sites])
    pooled_y = np.concatenate([s.train.y for s in partition.sites])
    global_model = init_moae(
        pooled_x.shape[1], site_cfg.latent_dim, streams.global_model().child(0),
        hidden=site_cfg.hidden,
    )
    global_model, _ = train_moae(
        global_model,
        pooled_x,
        pooled_y,
        epochs=site_cfg.epochs,
        rng=streams.global_model().child(1),
        batch_size=site_cfg.batch_size,
        adam=site_cfg.adam,
        loss_weights=site_cfg.loss_weights,
    )

    latent_space = config.evaluation.feature_space == "latent"
    eval_sites = []
    for i, split in enumerate(partition.sites):
        site_model = site_results[i].model
        if latent_space:
            enc_train = encode(site_model, split.train.x)
            enc_test = encode(site_model, split.test.x)
            abc_rows = site_results[i].received_samples
        else:
            enc_train = split.train.x
            enc_test = split.test.x
            abc_rows = None  # delivered rows live in latent space
        eval_sites.append(
            SiteEvalData(
                site=i,
                enc_train=enc_train,
                train_y=split.train.y,
                enc_test=enc_test,
                test_y=split.test.y,
                global_enc_train=encode(global_model, split.train.x) if latent_space else split.train.x,
                global_enc_test=encode(global_model, split.test.x) if latent_space else split.test.x,
                abc_samples=abc_rows,
            )
        )
    classifier_cfg = ClassifierConfig(
        iters=config.classifier.iters, lr=config.classifier.lr, l2=config.classifier.l2
    )
    report = run_conditions(eval_sites, classifier_cfg, streams.evaluation())
    report.meta = {
        "seed": config.seed,
        "config_hash": config.config_hash(),
        "epsilon": result.epsilon,
        "accepted": len(result.accepted),
        "trials": result.trials,
        "acceptance_rate": result.acceptance_rate,
        "mixture_components": n_components,
        "feature_space": config.evaluation.feature_space,
    }

    _write_json(out_dir / POSTERIOR_FILE, result.to_json(encode_theta=GmmParams.to_json))
    log.dump(out_dir / MESSAGES_FILE)
    _write_json(out_dir / REPORT_JSON, report.to_json())
    with open(out_dir / REPORT_TEXT, "w", encoding="utf-8") as fh:
        fh.write(report.to_text())
    config.dump(out_dir / RESOLVED_CONFIG)
    return RunArtifacts(
        result=result, report=report, site_results=site_results, epsilon=result.epsilon
    )


# -- report aggregation -------------------------------------------------------


def aggregate_reports(paths: list[Path]) -> tuple[str, dict, list[str]]:
    """Mean and standard deviation per cell across runs.

    Returns (text table, aggregate doc, warnings). Config-hash mismatches
    produce a warning, not an error.
    """
    from .evaluation import CONDITIONS, METRIC_FIELDS

    docs = []
    for path in paths:
        with open(path, encoding="utf-8") as fh:
            docs.append(json.load(fh))
    if not docs:
        raise ValueError("no reports to aggregate")
    warnings = []
    hashes = {d.get("meta", {}).get("config_hash") for d in docs}
    if len(hashes) > 1:
        warnings.append(f"aggregating runs with differing config hashes: {sorted(map(str, hashes))}")

    cells: dict[tuple[int, str, str], list[float]] = {}
    for doc in docs:
        for row in doc["rows"]:
            for metric in METRIC_FIELDS:
                cells.setdefault((row["site"], row["condition"], metric), []).append(row[metric])

    sites = sorted({key[0] for key in cells})
    lines = []
    header = "site condition   " + "".join(f"{m:>22}" for m in METRIC_FIELDS)
    lines.append(header)
    aggregate: dict[str, dict] = {}
    for site in sites:
        for condition in CONDITIONS:
            if (site, condition, "f1") not in cells:
                continue
            stats = {}
            parts = []
            for metric in METRIC_FIELDS:
                values = np.array(cells[(site, condition, metric)])
                stats[metric] = {"mean": float(values.mean()), "sd": float(values.std(ddof=0))}
                parts.append(f"{values.mean():.4f} +- {values.std(ddof=0):.4f}")
            aggregate[f"site{site}.{condition}"] = stats
            lines.append(f"{site:>4} {condition:<11}" + "".join(f"{p:>22}" for p in parts))
    text = "\n".join(lines) + "\n"
    return text, {"runs": len(docs), "cells": aggregate}, warnings
