"""End-to-end flow: windows -> entropy split -> clustering -> per-cluster models -> forecasts."""

from __future__ import annotations

import csv
import json
import math
from concurrent.futures import ProcessPoolExecutor
from dataclasses import asdict, dataclass, field, replace
from pathlib import Path

import numpy as np

from . import cluster as hc
from .data import (
    Dataset,
    ScalerParams,
    Series,
    apply_scaler,
    chronological_split,
    invert_scaler,
    make_windows,
    normalize_dataset,
)
from .entropy import EmbeddingConfig, partition_by_entropy, segment_entropies
from .errors import IoError, NoModels, ValidationError
from .metrics import all_metrics, baselines, count_flops_params
from .nsga2 import Choice, GenomeSpace, Int, Real, SearchConfig, evolve, fast_nondominated_sort, random_search
from .retnet import HyperParams, RetNetConfig, RetNetParams, predict, train_model

GROUPS = ("low", "high")


@dataclass(frozen=True)
class PipelineConfig:
    entropy: EmbeddingConfig = EmbeddingConfig()
    input_len: int = 12
    horizon: int = 1
    k: object = "auto"  # int or "auto"
    k_range: tuple = (2, 5)
    alpha: float = 0.5
    assign_mode: str = "medoid"
    seed: int = 0
    model: RetNetConfig = RetNetConfig()
    hyper: HyperParams = HyperParams()
    optimizer: str = "none"
    search: SearchConfig = SearchConfig()
    search_epochs: int = 30
    train_frac: float = 0.7
    val_frac: float = 0.15
    n_jobs: int = 1

    def __post_init__(self):
        if not 0 <= self.alpha <= 1:
            raise ValidationError("alpha must lie in [0, 1]")
        if self.assign_mode not in ("medoid", "loss"):
            raise ValidationError("assign_mode must be 'medoid' or 'loss'")
        if self.optimizer not in ("none", "nsga2", "rs"):
            raise ValidationError("optimizer must be none, nsga2 or rs")
        if self.k != "auto" and (not isinstance(self.k, int) or self.k < 1):
            raise ValidationError("k must be 'auto' or a positive integer")
        if len(self.k_range) != 2 or not 2 <= self.k_range[0] <= self.k_range[1]:
            raise ValidationError("k_range must be (min, max) with 2 <= min <= max")

    def to_dict(self) -> dict:
        return {
            "entropy": asdict(self.entropy),
            "input_len": self.input_len,
            "horizon": self.horizon,
            "k": self.k,
            "k_range": list(self.k_range),
            "alpha": self.alpha,
            "assign_mode": self.assign_mode,
            "seed": self.seed,
            "model": self.model.to_dict(),
            "hyper": self.hyper.to_dict(),
            "optimizer": self.optimizer,
            "search": asdict(self.search),
            "search_epochs": self.search_epochs,
            "train_frac": self.train_frac,
            "val_frac": self.val_frac,
        }

    @classmethod
    def from_dict(cls, d: dict) -> "PipelineConfig":
        return cls(
            entropy=EmbeddingConfig(**d["entropy"]),
            input_len=d["input_len"],
            horizon=d["horizon"],
            k=d["k"],
            k_range=tuple(d["k_range"]),
            alpha=d["alpha"],
            assign_mode=d["assign_mode"],
            seed=d["seed"],
            model=RetNetConfig(**d["model"]),
            hyper=HyperParams(**d["hyper"]),
            optimizer=d["optimizer"],
            search=SearchConfig(**d["search"]),
            search_epochs=d["search_epochs"],
            train_frac=d["train_frac"],
            val_frac=d["val_frac"],
        )


@dataclass
class Prepared:
    """Normalised, windowed and split data plus the scalers fit on the training rows."""

    train: list
    val: list
    test: list
    scalers: list
    names: list

    @property
    def target_scaler(self) -> ScalerParams:
        return self.scalers[-1]

    def denorm(self, values):
        return invert_scaler(values, self.target_scaler)


@dataclass
class ClusterModel:
    label: int
    group: str
    medoid: np.ndarray  # normalised target window
    medoid_origin: int
    params: RetNetParams
    hyper: HyperParams
    train_loss: float
    n_train: int
    history: dict = field(default_factory=dict)


@dataclass
class ClusterModelSet:
    models: list
    config: PipelineConfig
    scalers: list
    names: list

    def __len__(self):
        return len(self.models)


@dataclass
class Clustering:
    labels: np.ndarray  # per training sample
    groups: list  # per cluster label
    medoids: list  # training-sample index per cluster
    entropies: np.ndarray  # per training sample
    entropy_groups: list  # per training sample
    dendrograms: dict  # group -> (Dendrogram, leaf training-sample indices)


@dataclass
class TrainingResult:
    models: ClusterModelSet
    prepared: Prepared
    clustering: Clustering


@dataclass
class ForecastReport:
    predictions: list  # (origin_index, cluster_id, yhat, y) in physical units
    metrics: dict
    flops: int
    param_count: int
    combined_objective: float | None
    per_cluster: dict = field(default_factory=dict)
    baselines: dict = field(default_factory=dict)
    entropy_rows: list = field(default_factory=list)
    cluster_rows: list = field(default_factory=list)


# data preparation ------------------------------------------------------------

def prepare(data: Dataset, cfg: PipelineConfig, scalers: list | None = None) -> Prepared:
    raw = make_windows(data, cfg.input_len, cfg.horizon)
    train, val, test = chronological_split(raw, cfg.train_frac, cfg.val_frac)
    if not train:
        raise ValidationError("training split is empty")
    if scalers is None:
        fit_rows = train[-1].origin_index + cfg.input_len + cfg.horizon
        norm, scalers = normalize_dataset(data, fit_rows)
    else:
        if len(scalers) != len(data.columns):
            raise ValidationError(f"expected {len(data.columns)} scalers, got {len(scalers)}")
        cols = [Series(s.name, s.unit, apply_scaler(s.values, p)) for s, p in zip(data.columns, scalers)]
        norm = Dataset(cols[:-1], cols[-1], data.schema_id)
    windows = make_windows(norm, cfg.input_len, cfg.horizon)
    n_tr, n_va = len(train), len(val)
    return Prepared(windows[:n_tr], windows[n_tr:n_tr + n_va], windows[n_tr + n_va:], list(scalers), data.names)


def _arrays(samples):
    if not samples:
        return None
    return np.stack([s.inputs for s in samples]), np.stack([s.target_future for s in samples])


# clustering ------------------------------------------------------------------

def _choose_k(n: int, cfg: PipelineConfig, D, tree) -> int:
    if n < 2:
        return 1
    if cfg.k != "auto":
        return min(int(cfg.k), n)
    k_max = min(cfg.k_range[1], n - 1)
    k_min = min(cfg.k_range[0], k_max)
    if k_min < 2:
        return 1
    return hc.select_k(k_min=k_min, k_max=k_max, distances=D, dendrogram=tree)


def _merge_small(labels: np.ndarray, D: np.ndarray, min_size: int) -> np.ndarray:
    """Fold clusters smaller than ``min_size`` into their linkage-nearest neighbour."""
    labels = labels.copy()
    while True:
        present = sorted(set(labels.tolist()))
        if len(present) <= 1:
            return labels
        sizes = {c: int(np.sum(labels == c)) for c in present}
        small = [c for c in present if sizes[c] < min_size]
        if not small:
            return labels
        c = min(small, key=lambda c: (sizes[c], c))
        members = np.flatnonzero(labels == c)
        best = min(
            (hc.cluster_linkage(members, np.flatnonzero(labels == o), D), o) for o in present if o != c
        )[1]
        labels[labels == c] = best


def _relabel(labels: np.ndarray) -> np.ndarray:
    mapping: dict = {}
    return np.array([mapping.setdefault(v, len(mapping)) for v in labels.tolist()], dtype=np.int64)


def _zero_route(medoid_windows: list) -> int:
    # a zero window is nearest (Euclidean) to the medoid with the smallest norm
    return int(np.argmin([float(np.linalg.norm(m)) for m in medoid_windows]))


def cluster_training_windows(train: list, cfg: PipelineConfig, min_size: int = 1) -> Clustering:
    """Entropy split of the training windows, then clustering inside each group."""
    hist = np.stack([s.target_history for s in train])
    entropies = segment_entropies(hist, cfg.entropy)
    if len(train) >= 2:
        high, low = partition_by_entropy(entropies)
    else:
        high, low = [], list(range(len(train)))
    group_of = ["low"] * len(train)
    for i in high:
        group_of[i] = "high"
    nonzero = hist.sum(axis=1) != 0

    labels = np.full(len(train), -1, dtype=np.int64)
    groups, medoids, dendrograms = [], [], {}
    next_label = 0
    for group, idx in (("low", low), ("high", high)):
        idx = np.array([i for i in idx if nonzero[i]], dtype=np.int64)
        if idx.size == 0:
            continue
        if idx.size == 1:
            local = np.zeros(1, dtype=np.int64)
            D = np.zeros((1, 1))
        else:
            D = hc.pairwise_distances(hist[idx])
            tree = hc.agglomerate(distances=D)
            dendrograms[group] = (tree, idx.tolist())
            k = _choose_k(idx.size, cfg, D, tree)
            local = hc.cut_dendrogram(tree, k).labels
            local = _relabel(_merge_small(local, D, min_size))
        for c in range(int(local.max()) + 1):
            members = np.flatnonzero(local == c)
            sub = D[np.ix_(members, members)].sum(axis=1)
            medoids.append(int(idx[members[int(np.argmin(sub))]]))
            groups.append(group)
            labels[idx[members]] = next_label
            next_label += 1
    if next_label == 0:
        raise ValidationError("every training window is all-zero; nothing to cluster")
    zero_target = _zero_route([hist[m] for m in medoids])
    labels[~nonzero] = zero_target
    return Clustering(labels, groups, medoids, entropies, group_of, dendrograms)


# routing ---------------------------------------------------------------------

def _medoid_distances(x: np.ndarray, models: list) -> list:
    return [hc.series_distance(x, m.medoid) for m in models]


def assign_cluster(inputs, models, mode: str = "medoid") -> int:
    """Cluster label for one normalised input window; ties go to the lowest label."""
    models = getattr(models, "models", models)
    if not models:
        raise NoModels("no cluster models")
    if len(models) == 1:
        return models[0].label
    inputs = np.asarray(inputs, dtype=np.float64)
    if mode == "medoid":
        x = inputs[:, -1]
        if x.sum() == 0:
            return models[_zero_route([m.medoid for m in models])].label
        scores = _medoid_distances(x, models)
    elif mode == "loss":
        # predict the last known target from the window shifted back one step
        shifted = np.vstack([inputs[:1], inputs[:-1]])
        scores = [float((predict(m.params, shifted[None])[0, 0] - inputs[-1, -1]) ** 2) for m in models]
    else:
        raise ValidationError(f"unknown assign mode {mode!r}")
    return models[int(np.argmin(scores))].label


def assign_all(samples, models, mode: str = "medoid") -> np.ndarray:
    return np.array([assign_cluster(s.inputs, models, mode) for s in samples], dtype=np.int64)


# training --------------------------------------------------------------------

def _fit_one(args):
    X, Y, Xv, Yv, cfg, hyper, seed = args
    val = (Xv, Yv) if Xv is not None else []
    return train_model((X, Y), val, cfg, hyper, seed)


def model_config_for(data_vars: int, cfg: PipelineConfig) -> RetNetConfig:
    return replace(cfg.model, input_len=cfg.input_len, horizon=cfg.horizon, n_vars=data_vars)


def run_training_pipeline(data: Dataset, cfg: PipelineConfig, prepared: Prepared | None = None) -> TrainingResult:
    prepared = prepared or prepare(data, cfg)
    mcfg = model_config_for(len(prepared.names), cfg)
    hyper = cfg.hyper
    if cfg.optimizer != "none":
        search = optimize(prepared, cfg)
        mcfg, hyper = search["best_config"], search["best_hyper"]
        hyper = replace(hyper, epochs=cfg.hyper.epochs, patience=cfg.hyper.patience)

    clustering = cluster_training_windows(prepared.train, cfg, min_size=hyper.batch)
    n_clusters = len(clustering.medoids)
    stubs = [
        ClusterModel(c, clustering.groups[c], prepared.train[clustering.medoids[c]].target_history.copy(),
                     prepared.train[clustering.medoids[c]].origin_index, None, hyper, math.nan, 0)
        for c in range(n_clusters)
    ]
    val_labels = assign_all(prepared.val, stubs, "medoid") if prepared.val else np.zeros(0, dtype=np.int64)

    Xtr, Ytr = _arrays(prepared.train)
    va = _arrays(prepared.val)
    seeds = np.random.SeedSequence(cfg.seed).generate_state(n_clusters)
    jobs = []
    for c in range(n_clusters):
        tr_idx = np.flatnonzero(clustering.labels == c)
        va_idx = np.flatnonzero(val_labels == c)
        Xv = va[0][va_idx] if va is not None and va_idx.size else None
        Yv = va[1][va_idx] if va is not None and va_idx.size else None
        jobs.append((Xtr[tr_idx], Ytr[tr_idx], Xv, Yv, mcfg, hyper, int(seeds[c])))
    if cfg.n_jobs > 1 and n_clusters > 1:
        with ProcessPoolExecutor(max_workers=cfg.n_jobs) as pool:
            fitted = list(pool.map(_fit_one, jobs))
    else:
        fitted = [_fit_one(j) for j in jobs]
    for stub, job, (params, history) in zip(stubs, jobs, fitted):
        stub.params = params
        stub.history = history
        stub.train_loss = history["final_train_mse"]
        stub.n_train = len(job[0])
    models = ClusterModelSet(stubs, cfg, prepared.scalers, prepared.names)
    return TrainingResult(models, prepared, clustering)


# forecasting -----------------------------------------------------------------

def forecast(samples: list, models: ClusterModelSet, cfg: PipelineConfig | None = None,
             denorm=None) -> ForecastReport:
    cfg = cfg or models.config
    if not models.models:
        raise NoModels("no cluster models")
    denorm = denorm or (lambda v: invert_scaler(v, models.scalers[-1]))
    by_label = {m.label: m for m in models.models}
    flops = max(count_flops_params(m.params.cfg)[0] for m in models.models)
    params = sum(m.params.n_scalars() for m in models.models)
    if not samples:
        return ForecastReport([], all_metrics([], []), flops, params, None)

    labels = assign_all(samples, models, cfg.assign_mode)
    X = np.stack([s.inputs for s in samples])
    Y = np.stack([s.target_future for s in samples])
    Yhat = np.zeros_like(Y)
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        Yhat[idx] = predict(by_label[int(lab)].params, X[idx])
    y_phys, yhat_phys = denorm(Y), denorm(Yhat)
    rows = [
        (int(s.origin_index), int(lab), yhat_phys[i].tolist(), y_phys[i].tolist())
        for i, (s, lab) in enumerate(zip(samples, labels))
    ]
    per_cluster = {}
    for lab in np.unique(labels):
        idx = np.flatnonzero(labels == lab)
        per_cluster[str(int(lab))] = {"n": int(idx.size), **all_metrics(y_phys[idx], yhat_phys[idx])}
    train_loss = float(np.mean([m.train_loss for m in models.models]))
    val_loss = float(np.mean((Y - Yhat) ** 2))
    combined = cfg.alpha * train_loss + (1 - cfg.alpha) * val_loss
    return ForecastReport(rows, all_metrics(y_phys, yhat_phys), flops, params, combined, per_cluster)


def run_report(data: Dataset, cfg: PipelineConfig) -> tuple:
    """Train, forecast the test split and attach baselines plus entropy/cluster tables."""
    result = run_training_pipeline(data, cfg)
    prep = result.prepared
    report = forecast(prep.test, result.models, cfg, prep.denorm)
    if prep.test:
        report.baselines = baselines(_arrays(prep.train), _arrays(prep.test), prep.denorm)
    report.entropy_rows = entropy_rows(prep.train, result.clustering)
    report.cluster_rows = cluster_rows(prep.train, result.clustering)
    return report, result


def entropy_rows(train: list, clustering: Clustering) -> list:
    return [
        (s.origin_index, float(e), g)
        for s, e, g in zip(train, clustering.entropies, clustering.entropy_groups)
    ]


def cluster_rows(train: list, clustering: Clustering) -> list:
    return [(s.origin_index, int(lab)) for s, lab in zip(train, clustering.labels)]


# hyperparameter search -------------------------------------------------------

def model_search_space() -> GenomeSpace:
    return GenomeSpace({
        "log_lr": Real(-9.0, -4.0),
        "L": Int(1, 4),
        "h": Choice((1, 2, 4, 8)),
        "d": Choice((32, 64, 128)),
        "ffn_dim": Choice((64, 128, 256)),
        "chunk_b": Int(1, 8),
        "c1": Choice((8, 16, 32)),
        "c2": Choice((16, 32, 64)),
        "batch": Choice((16, 32, 64)),
    })


def repair_genome(g: dict) -> dict:
    """Shrink h until it divides d with an even head dimension."""
    g = dict(g)
    h = g["h"]
    while h > 1 and (g["d"] % h or (g["d"] // h) % 2):
        h //= 2
    g["h"] = h
    return g


def genome_to_model(g: dict, base: RetNetConfig, hyper: HyperParams) -> tuple:
    cfg = replace(base, d=g["d"], h=g["h"], L=g["L"], ffn_dim=g["ffn_dim"], chunk_b=g["chunk_b"],
                  conv_channels=(g["c1"], g["c2"]))
    return cfg, replace(hyper, lr=float(math.exp(g["log_lr"])), batch=int(g["batch"]))


def optimize(prepared: Prepared, cfg: PipelineConfig) -> dict:
    """Search model hyperparameters for (validation RMSE, FLOPs).

    Each genome trains one model on the whole training split for
    ``cfg.search_epochs`` epochs and is scored on the validation split in
    physical units.
    """
    base = model_config_for(len(prepared.names), cfg)
    short = replace(cfg.hyper, epochs=cfg.search_epochs)
    train = _arrays(prepared.train)
    val = _arrays(prepared.val) if prepared.val else train
    space = model_search_space()

    def evaluate(g: dict) -> tuple:
        mcfg, hyper = genome_to_model(g, base, short)
        params, _ = train_model(train, val, mcfg, hyper, cfg.seed)
        yhat = predict(params, val[0])
        err = math.sqrt(float(np.mean((prepared.denorm(val[1]) - prepared.denorm(yhat)) ** 2)))
        return err, float(count_flops_params(mcfg)[0])

    if cfg.optimizer == "rs":
        n_trials = cfg.search.population * (cfg.search.generations + 1)
        best, trials = random_search(evaluate, n_trials, space, cfg.search.seed, repair_genome)
        front = [t for t in trials if t.rank == 1]
    else:
        result = evolve(evaluate, cfg.search, space, repair_genome)
        front = result.front
        trials = result.evaluations
        best = min(front, key=lambda ind: (ind.objectives[0], ind.objectives[1]))
    bcfg, bhyper = genome_to_model(space.as_dict(best.genome), base, cfg.hyper)
    return {"space": space, "trials": trials, "front": front, "best": best,
            "best_config": bcfg, "best_hyper": bhyper}


def write_search(search: dict, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    space = search["space"]
    trials = search["trials"]
    ranks = fast_nondominated_sort([t.objectives for t in trials])
    rank_of = {i: r + 1 for r, front in enumerate(ranks) for i in front}
    with (out / "trials.csv").open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow([*space.names, "rmse", "flops", "rank"])
        for i, t in enumerate(trials):
            w.writerow([*[repr(v) for v in t.genome], repr(t.objectives[0]), repr(t.objectives[1]), rank_of[i]])
    pareto = [
        {"genome": space.as_dict(t.genome), "rmse": t.objectives[0], "flops": t.objectives[1]}
        for t in sorted(search["front"], key=lambda t: (t.objectives, t.genome))
    ]
    best = search["best"]
    payload = {"pareto": pareto, "best": {"genome": space.as_dict(best.genome), "rmse": best.objectives[0],
                                          "flops": best.objectives[1]}}
    (out / "pareto.json").write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n")


# persistence -----------------------------------------------------------------

def save_model_set(models: ClusterModelSet, out_dir) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    entries = []
    for m in models.models:
        sub = f"cluster_{m.label}"
        m.params.save(out / sub, {"hyper": m.hyper.to_dict()})
        entries.append({
            "label": m.label, "group": m.group, "dir": sub, "medoid": m.medoid.tolist(),
            "medoid_origin": m.medoid_origin, "train_loss": m.train_loss, "n_train": m.n_train,
        })
    manifest = {
        "pipeline": models.config.to_dict(),
        "scalers": [{"min": p.min, "max": p.max} for p in models.scalers],
        "names": models.names,
        "clusters": entries,
    }
    (out / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")


def load_model_set(model_dir) -> ClusterModelSet:
    root = Path(model_dir)
    try:
        manifest = json.loads((root / "manifest.json").read_text())
    except OSError as e:
        raise IoError(f"cannot read model set at {root}: {e}") from e
    cfg = PipelineConfig.from_dict(manifest["pipeline"])
    models = []
    for e in manifest["clusters"]:
        params, meta = RetNetParams.load(root / e["dir"])
        models.append(ClusterModel(e["label"], e["group"], np.array(e["medoid"]), e["medoid_origin"], params,
                                   HyperParams(**meta["hyper"]), e["train_loss"], e["n_train"]))
    scalers = [ScalerParams(s["min"], s["max"]) for s in manifest["scalers"]]
    return ClusterModelSet(models, cfg, scalers, manifest["names"])


# reports ---------------------------------------------------------------------

def _num(v):
    return None if v is None or (isinstance(v, float) and not math.isfinite(v)) else v


def report_metrics(report: ForecastReport) -> dict:
    return {
        "rmse": _num(report.metrics["rmse"]),
        "mae": _num(report.metrics["mae"]),
        "r2": _num(report.metrics["r2"]),
        "flops": report.flops,
        "params": report.param_count,
        "combined_objective": _num(report.combined_objective),
        "n_predictions": len(report.predictions),
        "per_cluster": {k: {kk: _num(vv) for kk, vv in v.items()} for k, v in report.per_cluster.items()},
        "baselines": {k: {kk: _num(vv) for kk, vv in v.items()} for k, v in report.baselines.items()},
    }


def emit_report(report: ForecastReport, out_dir) -> list:
    out = Path(out_dir)
    try:
        out.mkdir(parents=True, exist_ok=True)
        paths = [out / n for n in ("forecast.csv", "metrics.json", "entropy.csv", "clusters.csv")]
        with paths[0].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["origin_index", "cluster_id", "step", "actual", "predicted"])
            for origin, lab, yhat, y in report.predictions:
                for step, (a, p) in enumerate(zip(y, yhat), start=1):
                    w.writerow([origin, lab, step, repr(float(a)), repr(float(p))])
        paths[1].write_text(json.dumps(report_metrics(report), indent=2, sort_keys=True) + "\n")
        with paths[2].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["segment_start", "entropy", "group"])
            for start, e, g in report.entropy_rows:
                w.writerow([start, repr(float(e)), g])
        with paths[3].open("w", newline="") as fh:
            w = csv.writer(fh, lineterminator="\n")
            w.writerow(["segment_index", "label"])
            for idx, lab in report.cluster_rows:
                w.writerow([idx, lab])
    except OSError as e:
        raise IoError(f"cannot write report to {out}: {e}") from e
    return paths


def metrics_from_forecast_csv(path) -> dict:
    """Recompute rmse/mae/r2 from a written forecast.csv."""
    y, yhat = [], []
    with Path(path).open(newline="") as fh:
        for row in csv.DictReader(fh):
            y.append(float(row["actual"]))
            yhat.append(float(row["predicted"]))
    return all_metrics(np.array(y), np.array(yhat))
