"""Command-line pipeline: generate, build, train, predict, evaluate.

One JSON config file drives every stage; ``--set section.key=value`` flags
override single fields and are echoed into the run manifest.  Each stage
reads its inputs from the artifacts directory and writes its outputs
there, so any stage can be re-run in isolation and reproduces exactly
what a full run would have produced.  Logs go to stderr; machine-readable
artifacts go to files only.

Exit codes: 0 success, 2 configuration error, 3 data error, 4 numerical
divergence.
"""

from __future__ import annotations

import argparse
import dataclasses
import hashlib
import json
import logging
import os
import sys
from dataclasses import dataclass, field, fields, replace

from . import __version__
from .embeddings import load_embeddings, save_embeddings
from .errors import ConfigError, DataError, DivergenceError, OpenVocabError
from .figures import (
    save_category_accuracy_figure,
    save_rank_frequency_figure,
    save_sweep_figure,
)
from .graph import build_answer_graph, load_graph, save_graph
from .head import (
    BackboneProjection,
    ClosedHead,
    Prediction,
    TrainConfig,
    closed_vocab_predict,
    load_closed_checkpoint,
    load_open_checkpoint,
    load_predictions,
    predict_all,
    save_closed_checkpoint,
    save_open_checkpoint,
    top_k_train_answers,
    train_closed_head,
    train_open_head,
    write_predictions,
)
from .metrics import evaluate_report, save_report_csv, save_report_json
from .seeding import derive_seed
from .synth import GenConfig, gen_manifest, make_toy_table, sample_dataset
from .verbalizer import VerbalizerModel, export_attention_csv
from .vocabulary import (
    build_vocabularies,
    category_counts,
    load_samples,
    load_vocabulary,
    save_vocabulary,
    write_samples,
)

log = logging.getLogger("openvocab")


@dataclass(frozen=True)
class EmbeddingsSection:
    path: str | None = None
    n_words: int = 600
    dim: int = 50
    n_clusters: int = 30
    cluster_spread: float = 0.1


@dataclass(frozen=True)
class DataSection:
    n_answers: int = 200
    zipf_exponent: float = 2.2
    n_train: int = 5000
    n_test: int = 4000
    unseen_fraction: float = 0.2
    feature_dim: int = 64
    noise_sigma: float = 0.05


@dataclass(frozen=True)
class GraphSection:
    k_neighbors: int = 4
    hops: int = 1


@dataclass(frozen=True)
class VerbalizerSection:
    layers: int = 1
    epsilon: float = 0.7
    leaky_slope: float = 0.2


@dataclass(frozen=True)
class TrainSection:
    learning_rate: float = 1.0
    epochs: int = 50
    batch_size: int = 48
    temperature: float = 1.0
    closed_baseline: bool = True
    epsilon_one_arm: bool = True
    closed_top_k: int = 50


@dataclass(frozen=True)
class PredictSection:
    attention_csv: bool = False
    top_n: int = 5


@dataclass(frozen=True)
class SweepSection:
    epsilons: tuple[float, ...] = (0.5, 0.6, 0.7, 0.8, 0.9)


@dataclass(frozen=True)
class ExperimentConfig:
    seed: int = 7
    artifacts_dir: str = "artifacts"
    embeddings: EmbeddingsSection = field(default_factory=EmbeddingsSection)
    data: DataSection = field(default_factory=DataSection)
    graph: GraphSection = field(default_factory=GraphSection)
    verbalizer: VerbalizerSection = field(default_factory=VerbalizerSection)
    train: TrainSection = field(default_factory=TrainSection)
    predict: PredictSection = field(default_factory=PredictSection)
    sweep: SweepSection = field(default_factory=SweepSection)


_SECTIONS = {
    "embeddings": EmbeddingsSection,
    "data": DataSection,
    "graph": GraphSection,
    "verbalizer": VerbalizerSection,
    "train": TrainSection,
    "predict": PredictSection,
    "sweep": SweepSection,
}


def _coerce(name: str, value, target_type):
    if target_type is float and isinstance(value, int) and not isinstance(value, bool):
        return float(value)
    if target_type is int and isinstance(value, bool):
        raise ConfigError(f"{name}: expected int, got bool")
    if target_type in (int, float, str, bool) and not isinstance(value, target_type):
        raise ConfigError(f"{name}: expected {target_type.__name__}, got {type(value).__name__}")
    return value


def _build_section(cls, obj: dict, prefix: str):
    known = {f.name: f for f in fields(cls)}
    unknown = set(obj) - set(known)
    if unknown:
        raise ConfigError(f"unknown config key {prefix}.{sorted(unknown)[0]}")
    kwargs = {}
    for name, value in obj.items():
        f = known[name]
        if name == "path":
            if value is not None and not isinstance(value, str):
                raise ConfigError(f"{prefix}.path: expected string or null")
            kwargs[name] = value
        elif name == "epsilons":
            if not isinstance(value, list) or not value:
                raise ConfigError(f"{prefix}.epsilons: expected a non-empty list")
            try:
                kwargs[name] = tuple(float(v) for v in value)
            except (TypeError, ValueError):
                raise ConfigError(f"{prefix}.epsilons: expected numbers") from None
        else:
            kwargs[name] = _coerce(f"{prefix}.{name}", value, _FIELD_TYPES[cls, name])
    return cls(**kwargs)


# dataclasses store annotations as strings under `from __future__ import
# annotations`; resolve the primitive ones once for coercion
_FIELD_TYPES = {}
for _cls in (*_SECTIONS.values(), ExperimentConfig):
    for _f in fields(_cls):
        _FIELD_TYPES[_cls, _f.name] = {
            "int": int,
            "float": float,
            "str": str,
            "bool": bool,
        }.get(str(_f.type).replace(" ", ""), object)


def config_from_dict(obj: dict) -> ExperimentConfig:
    if not isinstance(obj, dict):
        raise ConfigError("config root must be a JSON object")
    unknown = set(obj) - ({"seed", "artifacts_dir"} | set(_SECTIONS))
    if unknown:
        raise ConfigError(f"unknown config key {sorted(unknown)[0]}")
    kwargs = {}
    if "seed" in obj:
        kwargs["seed"] = _coerce("seed", obj["seed"], int)
    if "artifacts_dir" in obj:
        kwargs["artifacts_dir"] = _coerce("artifacts_dir", obj["artifacts_dir"], str)
    for name, cls in _SECTIONS.items():
        section = obj.get(name, {})
        if not isinstance(section, dict):
            raise ConfigError(f"config section {name!r} must be an object")
        kwargs[name] = _build_section(cls, section, name)
    cfg = ExperimentConfig(**kwargs)
    _validate(cfg)
    return cfg


def _validate(cfg: ExperimentConfig) -> None:
    try:
        GenConfig(
            n_answers=cfg.data.n_answers,
            zipf_exponent=cfg.data.zipf_exponent,
            n_train=cfg.data.n_train,
            n_test=cfg.data.n_test,
            unseen_fraction=cfg.data.unseen_fraction,
            feature_dim=cfg.data.feature_dim,
            noise_sigma=cfg.data.noise_sigma,
            seed=cfg.seed,
        )
        TrainConfig(
            learning_rate=cfg.train.learning_rate,
            epochs=cfg.train.epochs,
            batch_size=cfg.train.batch_size,
            seed=cfg.seed,
            epsilon=cfg.verbalizer.epsilon,
            temperature=cfg.train.temperature,
        )
    except (ConfigError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    if cfg.graph.k_neighbors <= 0:
        raise ConfigError("graph.k_neighbors must be positive")
    if cfg.graph.hops < 0:
        raise ConfigError("graph.hops must be non-negative")
    if cfg.verbalizer.layers < 1:
        raise ConfigError("verbalizer.layers must be at least 1")
    if cfg.verbalizer.leaky_slope <= 0:
        raise ConfigError("verbalizer.leaky_slope must be positive")
    if cfg.train.closed_top_k <= 0:
        raise ConfigError("train.closed_top_k must be positive")
    if cfg.predict.top_n <= 0:
        raise ConfigError("predict.top_n must be positive")
    for eps in cfg.sweep.epsilons:
        if not 0.0 <= eps <= 1.0:
            raise ConfigError("sweep.epsilons must lie in [0, 1]")


def config_to_dict(cfg: ExperimentConfig) -> dict:
    out = dataclasses.asdict(cfg)
    out["sweep"]["epsilons"] = list(out["sweep"]["epsilons"])
    return out


def config_fingerprint(cfg: ExperimentConfig) -> str:
    """Short hash of the semantic config (output location excluded)."""
    semantic = config_to_dict(cfg)
    semantic.pop("artifacts_dir")
    blob = json.dumps(semantic, sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()[:12]


def config_meta(cfg: ExperimentConfig) -> dict:
    """Provenance block embedded in every artifact."""
    return {
        "fingerprint": config_fingerprint(cfg),
        "version": __version__,
        "seed": cfg.seed,
        "epsilon": cfg.verbalizer.epsilon,
        "hops": cfg.graph.hops,
        "k_neighbors": cfg.graph.k_neighbors,
        "layers": cfg.verbalizer.layers,
    }


def apply_overrides(obj: dict, overrides: list[str]) -> dict:
    for item in overrides:
        if "=" not in item:
            raise ConfigError(f"override {item!r} must look like section.key=value")
        key, raw = item.split("=", 1)
        try:
            value = json.loads(raw)
        except json.JSONDecodeError:
            value = raw
        parts = key.strip().split(".")
        target = obj
        for part in parts[:-1]:
            target = target.setdefault(part, {})
            if not isinstance(target, dict):
                raise ConfigError(f"override {item!r}: {part} is not a section")
        target[parts[-1]] = value
    return obj


def load_config(path: str | None, overrides: list[str], artifacts: str | None) -> ExperimentConfig:
    obj: dict = {}
    if path is not None:
        try:
            with open(path, "r", encoding="utf-8") as handle:
                obj = json.load(handle)
        except FileNotFoundError:
            raise ConfigError(f"config file not found: {path}") from None
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{path}: invalid JSON ({exc})") from None
    obj = apply_overrides(obj, overrides)
    if artifacts is not None:
        obj["artifacts_dir"] = artifacts
    return config_from_dict(obj)


@dataclass(frozen=True)
class Paths:
    root: str

    @property
    def embeddings(self) -> str:
        return os.path.join(self.root, "embeddings.txt")

    @property
    def train_samples(self) -> str:
        return os.path.join(self.root, "train.jsonl")

    @property
    def test_samples(self) -> str:
        return os.path.join(self.root, "test.jsonl")

    @property
    def dataset_manifest(self) -> str:
        return os.path.join(self.root, "dataset_manifest.json")

    @property
    def vocab(self) -> str:
        return os.path.join(self.root, "vocab.json")

    @property
    def graph_train(self) -> str:
        return os.path.join(self.root, "graph_train.json")

    @property
    def graph_test(self) -> str:
        return os.path.join(self.root, "graph_test.json")

    def checkpoint(self, arm: str) -> str:
        return os.path.join(self.root, "checkpoints", f"{arm}.ckpt")

    def predictions(self, arm: str) -> str:
        return os.path.join(self.root, "predictions", f"{arm}.jsonl")

    def attention(self, arm: str) -> str:
        return os.path.join(self.root, "attention", f"{arm}.csv")

    def report_json(self, arm: str) -> str:
        return os.path.join(self.root, "reports", f"{arm}.json")

    def report_csv(self, arm: str) -> str:
        return os.path.join(self.root, "reports", f"{arm}.csv")

    def report_figure(self, arm: str) -> str:
        return os.path.join(self.root, "reports", f"{arm}_categories.png")

    @property
    def frequency_figure(self) -> str:
        return os.path.join(self.root, "reports", "train_frequency.png")

    @property
    def manifest(self) -> str:
        return os.path.join(self.root, "manifest.json")

    @property
    def sweep_dir(self) -> str:
        return os.path.join(self.root, "sweep")


def _arms(cfg: ExperimentConfig) -> list[str]:
    arms = ["open"]
    if cfg.train.epsilon_one_arm:
        arms.append("open_eps1")
    if cfg.train.closed_baseline:
        arms.append("closed")
    return arms


def _embeddings_path(cfg: ExperimentConfig, paths: Paths) -> str:
    return cfg.embeddings.path if cfg.embeddings.path else paths.embeddings


def _require(path: str, hint: str) -> str:
    if not os.path.exists(path):
        raise DataError(f"missing {path} (run the {hint} stage first)")
    return path


def _write_json(obj: dict, path: str) -> None:
    with open(path, "w", encoding="utf-8") as handle:
        json.dump(obj, handle, sort_keys=True, separators=(",", ":"))
        handle.write("\n")


def write_manifest(cfg: ExperimentConfig, overrides: list[str]) -> None:
    os.makedirs(cfg.artifacts_dir, exist_ok=True)
    manifest = {
        "config": config_to_dict(cfg),
        "fingerprint": config_fingerprint(cfg),
        "version": __version__,
        "overrides": list(overrides),
    }
    _write_json(manifest, Paths(cfg.artifacts_dir).manifest)


def stage_gen(cfg: ExperimentConfig) -> None:
    paths = Paths(cfg.artifacts_dir)
    if cfg.embeddings.path:
        table = load_embeddings(cfg.embeddings.path)
        log.info("gen: loaded %d embeddings (dim %d) from %s", len(table), table.dim, cfg.embeddings.path)
    else:
        table = make_toy_table(
            cfg.embeddings.n_words,
            cfg.embeddings.dim,
            cfg.embeddings.n_clusters,
            cfg.embeddings.cluster_spread,
            cfg.seed,
        )
        save_embeddings(table, paths.embeddings)
        log.info("gen: wrote toy table with %d words (dim %d)", len(table), table.dim)
    gen_cfg = GenConfig(
        n_answers=cfg.data.n_answers,
        zipf_exponent=cfg.data.zipf_exponent,
        n_train=cfg.data.n_train,
        n_test=cfg.data.n_test,
        unseen_fraction=cfg.data.unseen_fraction,
        feature_dim=cfg.data.feature_dim,
        noise_sigma=cfg.data.noise_sigma,
        seed=cfg.seed,
    )
    train_samples, test_samples = sample_dataset(gen_cfg, table)
    write_samples(train_samples, paths.train_samples)
    write_samples(test_samples, paths.test_samples)
    _write_json(
        gen_manifest(gen_cfg, {"provenance": config_meta(cfg)}),
        paths.dataset_manifest,
    )
    log.info("gen: wrote %d train / %d test samples", len(train_samples), len(test_samples))


def stage_vocab(cfg: ExperimentConfig) -> None:
    paths = Paths(cfg.artifacts_dir)
    train = load_samples(_require(paths.train_samples, "gen"))
    test = load_samples(_require(paths.test_samples, "gen"))
    vocab = build_vocabularies(train, test)
    save_vocabulary(vocab, paths.vocab, meta=config_meta(cfg))
    log.info("vocab: category counts %s", category_counts(vocab))


def stage_graph(cfg: ExperimentConfig) -> None:
    paths = Paths(cfg.artifacts_dir)
    table = load_embeddings(_require(_embeddings_path(cfg, paths), "gen"))
    vocab = load_vocabulary(_require(paths.vocab, "vocab"))
    if not vocab.train_answers:
        raise DataError("training vocabulary is empty")
    if not vocab.test_answers:
        raise DataError("test vocabulary is empty")
    meta = config_meta(cfg)
    train_graph = build_answer_graph(vocab.train_answers, table, cfg.graph.k_neighbors, cfg.graph.hops)
    save_graph(train_graph, paths.graph_train, meta=meta)
    test_graph = build_answer_graph(vocab.test_answers, table, cfg.graph.k_neighbors, cfg.graph.hops)
    save_graph(test_graph, paths.graph_test, meta=meta)
    log.info(
        "graph: train %d nodes / %d edges, test %d nodes / %d edges",
        len(train_graph.nodes), len(train_graph.edges),
        len(test_graph.nodes), len(test_graph.edges),
    )


def _train_config(cfg: ExperimentConfig, epsilon: float) -> TrainConfig:
    return TrainConfig(
        learning_rate=cfg.train.learning_rate,
        epochs=cfg.train.epochs,
        batch_size=cfg.train.batch_size,
        seed=derive_seed(cfg.seed, "train"),
        epsilon=epsilon,
        temperature=cfg.train.temperature,
    )


def stage_train(cfg: ExperimentConfig) -> None:
    paths = Paths(cfg.artifacts_dir)
    samples = load_samples(_require(paths.train_samples, "gen"))
    vocab = load_vocabulary(_require(paths.vocab, "vocab"))
    graph = load_graph(_require(paths.graph_train, "graph"))
    os.makedirs(os.path.join(cfg.artifacts_dir, "checkpoints"), exist_ok=True)
    meta = config_meta(cfg)
    meta["temperature"] = cfg.train.temperature
    dim = graph.dim
    feature_dim = samples[0].feature.shape[0]

    open_arms = [("open", cfg.verbalizer.epsilon)]
    if cfg.train.epsilon_one_arm:
        open_arms.append(("open_eps1", 1.0))
    for arm, epsilon in open_arms:
        # both open arms start from the same seeds so epsilon is the only
        # difference between them
        model = VerbalizerModel.initialize(
            dim,
            n_layers=cfg.verbalizer.layers,
            epsilon=epsilon,
            leaky_slope=cfg.verbalizer.leaky_slope,
            seed=derive_seed(cfg.seed, "verbalizer-init"),
        )
        proj = BackboneProjection.initialize(dim, feature_dim, seed=derive_seed(cfg.seed, "backbone-init"))
        losses = train_open_head(samples, graph, model, proj, _train_config(cfg, epsilon))
        arm_meta = dict(meta)
        arm_meta["epsilon"] = epsilon
        save_open_checkpoint(paths.checkpoint(arm), proj, model, arm_meta)
        if losses:
            log.info("train[%s]: loss %.4f -> %.4f over %d epochs", arm, losses[0], losses[-1], len(losses))
        else:
            log.info("train[%s]: 0 epochs, checkpoint is the initialization", arm)

    if cfg.train.closed_baseline:
        head_vocab = top_k_train_answers(vocab, cfg.train.closed_top_k)
        head = ClosedHead.initialize(head_vocab, dim, seed=derive_seed(cfg.seed, "closed-head-init"))
        proj = BackboneProjection.initialize(dim, feature_dim, seed=derive_seed(cfg.seed, "closed-backbone-init"))
        losses = train_closed_head(samples, head, proj, _train_config(cfg, cfg.verbalizer.epsilon))
        save_closed_checkpoint(paths.checkpoint("closed"), proj, head, meta)
        if losses:
            log.info("train[closed]: loss %.4f -> %.4f", losses[0], losses[-1])


def stage_predict(cfg: ExperimentConfig) -> None:
    paths = Paths(cfg.artifacts_dir)
    samples = load_samples(_require(paths.test_samples, "gen"))
    vocab = load_vocabulary(_require(paths.vocab, "vocab"))
    graph = load_graph(_require(paths.graph_test, "graph"))
    os.makedirs(os.path.join(cfg.artifacts_dir, "predictions"), exist_ok=True)
    meta = config_meta(cfg)
    for arm in _arms(cfg):
        ckpt_path = _require(paths.checkpoint(arm), "train")
        if arm == "closed":
            proj, head, _ = load_closed_checkpoint(ckpt_path)
            preds = []
            for s in samples:
                m = proj.matrix @ s.feature
                scores = head.weight @ m + head.bias
                order = sorted(
                    range(len(head.vocab)),
                    key=lambda i: (-scores[i], head.vocab[i].text),
                )[: cfg.predict.top_n]
                top = [(head.vocab[i].text, float(scores[i])) for i in order]
                preds.append(Prediction(s.sample_id, closed_vocab_predict(head, m), s.answer, top))
        else:
            proj, model, ckpt_meta = load_open_checkpoint(ckpt_path)
            temperature = float(ckpt_meta.get("temperature", 1.0))
            preds = predict_all(proj, model, graph, samples, temperature, cfg.predict.top_n)
            if cfg.predict.attention_csv:
                os.makedirs(os.path.join(cfg.artifacts_dir, "attention"), exist_ok=True)
                export_attention_csv(
                    model, graph, paths.attention(arm),
                    comment=f"fingerprint={meta['fingerprint']} version={__version__}",
                )
        arm_meta = dict(meta)
        arm_meta["arm"] = arm
        write_predictions(preds, vocab, paths.predictions(arm), meta=arm_meta)
        log.info("predict[%s]: wrote %d predictions", arm, len(preds))


def stage_eval(cfg: ExperimentConfig) -> None:
    paths = Paths(cfg.artifacts_dir)
    vocab = load_vocabulary(_require(paths.vocab, "vocab"))
    os.makedirs(os.path.join(cfg.artifacts_dir, "reports"), exist_ok=True)
    meta = config_meta(cfg)
    note = f"fingerprint={meta['fingerprint']} v{__version__}"
    save_rank_frequency_figure(
        [n for n in vocab.train_frequency.values() if n > 0],
        paths.frequency_figure,
        note=note,
    )
    for arm in _arms(cfg):
        _, preds = load_predictions(_require(paths.predictions(arm), "predict"))
        report = evaluate_report([(p.gold, p.predicted) for p in preds], vocab)
        arm_meta = dict(meta)
        arm_meta["arm"] = arm
        save_report_json(report, paths.report_json(arm), config_meta=arm_meta)
        save_report_csv(report, paths.report_csv(arm), comment=f"{note} arm={arm}")
        save_category_accuracy_figure(report, paths.report_figure(arm), note=f"{note} arm={arm}")
        log.info(
            "eval[%s]: total %s, macc %s, unseen %s",
            arm,
            "-" if report.acc_total is None else f"{report.acc_total:.1f}",
            "-" if report.macc is None else f"{report.macc:.1f}",
            "-" if report.acc_unseen is None else f"{report.acc_unseen:.1f}",
        )


_RUN_STAGES = (
    ("gen", stage_gen),
    ("vocab", stage_vocab),
    ("graph", stage_graph),
    ("train", stage_train),
    ("predict", stage_predict),
    ("eval", stage_eval),
)


class StageFailure(Exception):
    def __init__(self, stage: str, cause: Exception):
        super().__init__(f"stage {stage}: {cause}")
        self.stage = stage
        self.cause = cause


def _run_stage(name: str, fn, cfg: ExperimentConfig) -> None:
    try:
        fn(cfg)
    except OpenVocabError as exc:
        raise StageFailure(name, exc) from exc


def cmd_run(cfg: ExperimentConfig) -> None:
    for name, fn in _RUN_STAGES:
        _run_stage(name, fn, cfg)


def cmd_sweep(cfg: ExperimentConfig) -> None:
    os.makedirs(Paths(cfg.artifacts_dir).sweep_dir, exist_ok=True)
    rows = []
    for eps in cfg.sweep.epsilons:
        arm_dir = os.path.join(Paths(cfg.artifacts_dir).sweep_dir, f"eps_{eps:g}")
        arm_cfg = replace(
            cfg,
            artifacts_dir=arm_dir,
            verbalizer=replace(cfg.verbalizer, epsilon=eps),
            train=replace(cfg.train, closed_baseline=False, epsilon_one_arm=False),
        )
        os.makedirs(arm_dir, exist_ok=True)
        write_manifest(arm_cfg, [])
        log.info("sweep: running epsilon=%g", eps)
        for name, fn in _RUN_STAGES:
            _run_stage(name, fn, arm_cfg)
        with open(Paths(arm_dir).report_json("open"), "r", encoding="utf-8") as handle:
            rows.append((eps, json.load(handle)))

    sweep_csv = os.path.join(Paths(cfg.artifacts_dir).sweep_dir, "sweep.csv")
    meta = config_meta(cfg)
    with open(sweep_csv, "w", encoding="utf-8", newline="") as handle:
        handle.write(f"# fingerprint={meta['fingerprint']} version={__version__}\n")
        handle.write("epsilon,base,common,rare,unseen,total,macc,bng\n")
        for eps, report in rows:
            acc = report["accuracy"]
            cells = [acc["base"], acc["common"], acc["rare"], acc["unseen"], acc["total"], report["macc"], report["bng"]]
            handle.write(",".join([f"{eps:g}"] + ["" if c is None else f"{c:.1f}" for c in cells]) + "\n")
    series = {
        "total": [r["accuracy"]["total"] for _, r in rows],
        "unseen": [r["accuracy"]["unseen"] for _, r in rows],
        "macc": [r["macc"] for _, r in rows],
    }
    save_sweep_figure(
        list(cfg.sweep.epsilons),
        series,
        os.path.join(Paths(cfg.artifacts_dir).sweep_dir, "sweep.png"),
        note=f"fingerprint={meta['fingerprint']} v{__version__}",
    )
    log.info("sweep: wrote %s", sweep_csv)


_COMMANDS = {
    "gen": lambda cfg: _run_stage("gen", stage_gen, cfg),
    "vocab": lambda cfg: _run_stage("vocab", stage_vocab, cfg),
    "graph": lambda cfg: _run_stage("graph", stage_graph, cfg),
    "train": lambda cfg: _run_stage("train", stage_train, cfg),
    "predict": lambda cfg: _run_stage("predict", stage_predict, cfg),
    "eval": lambda cfg: _run_stage("eval", stage_eval, cfg),
    "run": cmd_run,
    "sweep": cmd_sweep,
}

_EXIT_CODES = {
    ConfigError: 2,
    DataError: 3,
    DivergenceError: 4,
}


def _exit_code(exc: Exception) -> int:
    for cls, code in _EXIT_CODES.items():
        if isinstance(exc, cls):
            return code
    return 1


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="openvocab",
        description="open-vocabulary answer classification pipeline",
    )
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _COMMANDS:
        p = sub.add_parser(name, help=f"{name} stage" if name not in ("run", "sweep") else f"{name} the pipeline")
        p.add_argument("--config", "-c", default=None, help="JSON config file")
        p.add_argument(
            "--set", dest="overrides", action="append", default=[],
            metavar="KEY=VALUE", help="override one config field (dotted key)",
        )
        p.add_argument("--artifacts", default=None, help="override the artifacts directory")
    return parser


def main(argv: list[str] | None = None) -> int:
    logging.basicConfig(
        stream=sys.stderr, level=logging.INFO, format="%(levelname)s %(name)s: %(message)s"
    )
    args = build_parser().parse_args(argv)
    try:
        cfg = load_config(args.config, args.overrides, args.artifacts)
    except ConfigError as exc:
        log.error("config: %s", exc)
        return 2
    write_manifest(cfg, args.overrides)
    try:
        _COMMANDS[args.command](cfg)
    except StageFailure as exc:
        log.error("%s", exc)
        return _exit_code(exc.cause)
    except OpenVocabError as exc:
        log.error("%s: %s", args.command, exc)
        return _exit_code(exc)
    return 0
