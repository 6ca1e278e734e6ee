"""Stage-based pipeline with an exact-replay manifest.

Every stage reads and writes files inside a workspace directory, records the
content hashes of its inputs and outputs plus its derived seed in
manifest.json, and refuses to run on inputs whose hashes no longer match what
their producing stage recorded.  One master seed derives every stage seed, so
two runs over the same inputs are byte-identical.

Stages are classified for the privacy ledger: stages reading raw real data
are either DP-ledgered (their output carries noise accounted in the budget),
private preprocessing whose outputs stay inside the pipeline, or evaluation
stages whose reports are not part of the released artifact set.  A static
graph check enforces that released artifacts never consume unledgered real
data.
"""

from __future__ import annotations

import hashlib
import json
from pathlib import Path
from typing import Callable, Optional

import numpy as np
from pydantic import BaseModel, Field

from . import clustering, corpus as corpus_mod, divergence, embeddings, generator, histogram as histogram_mod
from . import leakage as leakage_mod
from . import pii as pii_mod
from . import resampler
from .accounting import training_budget
from .errors import ConfigError, StaleInputError
from .rng import derive_seed


class PreprocessConfig(BaseModel):
    ngram: int = 10
    min_tokens: int = 0
    patterns: list[str] = Field(default_factory=list)


class GeneratorConfig(BaseModel):
    embed_dim: int = 32
    hidden_dim: int = 64
    max_len: int = 64


class DpConfig(BaseModel):
    clip_threshold: float = 0.5
    noise_multiplier: float = 0.0
    batch_size: int = 64
    learning_rate: float = 1e-3
    epochs: int = 3


class SamplingSection(BaseModel):
    top_p: float = 0.95
    temperature: float = 1.0


class EmbeddingConfig(BaseModel):
    method: str = "hash"  # hash | import
    dim: int = 64
    real_path: Optional[str] = None  # import method: external embedding files
    synthetic_path: Optional[str] = None


class ClusterConfig(BaseModel):
    k: int = 1000
    max_iters: int = 100
    rel_tol: float = 1e-4
    normalized: bool = False


class MauveConfig(BaseModel):
    c_unigram: float = 5.0
    c_embedding: float = 10.0
    bins: int = 500
    lambda_grid: int = 500


class BudgetConfig(BaseModel):
    delta: float = 1e-5
    allow_large_delta: bool = False
    grid_spacing: float = 1e-4


class CanaryConfig(BaseModel):
    template: str
    secret: str
    repetitions: int = 100
    candidate_pool_size: int = 10000
    scan_count: int = 1000


class PiiConfig(BaseModel):
    base_url: str
    model: str
    api_key_env: str = "DPSYNTH_API_KEY"
    max_concurrency: int = 4
    max_retries: int = 3
    demonstrations: str = ""


class PipelineConfig(BaseModel):
    master_seed: int = 0
    real_corpus: str = "real_raw.jsonl"
    initial_samples: int = 2000
    target_selected: int = 500
    histogram_sigma: float = 10.0
    resample_with_replacement: bool = False
    preprocess: PreprocessConfig = Field(default_factory=PreprocessConfig)
    generator: GeneratorConfig = Field(default_factory=GeneratorConfig)
    dp: DpConfig = Field(default_factory=DpConfig)
    sampling: SamplingSection = Field(default_factory=SamplingSection)
    embedding: EmbeddingConfig = Field(default_factory=EmbeddingConfig)
    cluster: ClusterConfig = Field(default_factory=ClusterConfig)
    mauve: MauveConfig = Field(default_factory=MauveConfig)
    budget: BudgetConfig = Field(default_factory=BudgetConfig)
    canary: Optional[CanaryConfig] = None
    pii: Optional[PiiConfig] = None

    def fingerprint(self) -> str:
        return hashlib.sha256(self.model_dump_json().encode()).hexdigest()[:16]


def load_config(path: str | Path) -> PipelineConfig:
    try:
        return PipelineConfig.model_validate_json(Path(path).read_text(encoding="utf-8"))
    except (OSError, ValueError) as exc:
        raise ConfigError(f"cannot load pipeline config {path}: {exc}") from exc


# named defaults surfaced by the CLI `--explain`
EXPLAINED_DEFAULTS = [
    ("cluster.k", 1000, "cluster count for the vote histogram; trades resolution against per-bin noise"),
    ("histogram_sigma", 10.0, "noise std-dev for the one-shot histogram release"),
    ("sampling.top_p", 0.95, "nucleus mass for synthetic sampling"),
    ("dp.clip_threshold", 0.5, "per-example gradient clipping norm"),
    ("mauve.c_unigram", 5.0, "frontier scaling constant, unigram representation"),
    ("mauve.c_embedding", 10.0, "frontier scaling constant, embedding representation"),
    ("mauve.bins", 500, "embedding quantization bins for closeness scoring"),
]


def hash_embed_texts(texts: list[str], dim: int) -> np.ndarray:
    """Deterministic byte-trigram hashing featurizer.

    A stand-in for a sentence encoder at desk scale; real encoders plug in
    through the import method and the external embedding file format.
    """
    if dim < 1:
        raise ConfigError("embedding dim must be >= 1")
    out = np.zeros((len(texts), dim), dtype=np.float32)
    for row, text in enumerate(texts):
        data = b"\x02" + text.encode("utf-8") + b"\x03"
        for i in range(len(data) - 2):
            h = hashlib.blake2b(data[i : i + 3], digest_size=8).digest()
            idx = int.from_bytes(h[:4], "little") % dim
            sign = 1.0 if h[4] & 1 else -1.0
            out[row, idx] += sign
        n = max(1, len(data) - 2)
        out[row] /= np.sqrt(n)
    return out


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


class Workspace:
    def __init__(self, root: str | Path):
        self.root = Path(root)
        self.root.mkdir(parents=True, exist_ok=True)

    def path(self, name: str) -> Path:
        return self.root / name

    def manifest_path(self) -> Path:
        return self.root / "manifest.json"

    def load_manifest(self) -> dict:
        if self.manifest_path().exists():
            return json.loads(self.manifest_path().read_text(encoding="utf-8"))
        return {"stages": {}}

    def save_manifest(self, manifest: dict) -> None:
        self.manifest_path().write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n", encoding="utf-8")


class Stage:
    def __init__(
        self,
        name: str,
        inputs: Callable[[PipelineConfig], list[str]],
        outputs: Callable[[PipelineConfig], list[str]],
        run: Callable[[PipelineConfig, Workspace, int], None],
        reads_real: bool = False,
        dp_ledgered: bool = False,
        evaluation_only: bool = False,
        optional: bool = False,
        released_output_sources: dict[str, list[str]] | None = None,
    ):
        self.name = name
        self.inputs = inputs
        self.outputs = outputs
        self.run = run
        self.reads_real = reads_real
        self.dp_ledgered = dp_ledgered
        self.evaluation_only = evaluation_only
        self.optional = optional
        # for a stage that touches private data without being ledgered: which
        # inputs each of its released outputs is derived from
        self.released_output_sources = released_output_sources or {}


def _load_real(ws: Workspace) -> corpus_mod.Corpus:
    return corpus_mod.load_corpus(ws.path("real.jsonl"), role="real")


def _stage_preprocess(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    raw_path = Path(config.real_corpus)
    if not raw_path.is_absolute():
        raw_path = ws.path(config.real_corpus)
    c = corpus_mod.load_corpus(raw_path, role="real")
    c = corpus_mod.dedup_exact(c)
    c = corpus_mod.dedup_ngram(c, n=config.preprocess.ngram)
    if config.preprocess.min_tokens > 0:
        c = corpus_mod.filter_min_tokens(c, config.preprocess.min_tokens)
    if config.preprocess.patterns:
        c = corpus_mod.filter_patterns(c, config.preprocess.patterns)
    c.validate()
    corpus_mod.save_corpus(c, ws.path("real.jsonl"))


def _stage_train(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    real = _load_real(ws)
    model = generator.ToyLanguageModel.initialize(
        seed=derive_seed(seed, "model-init"),
        embed_dim=config.generator.embed_dim,
        hidden_dim=config.generator.hidden_dim,
        max_len=config.generator.max_len,
    )
    dp = config.dp
    result = generator.train(
        model,
        real,
        generator.DpAdamConfig(
            clip_threshold=dp.clip_threshold,
            noise_multiplier=dp.noise_multiplier,
            batch_size=dp.batch_size,
            learning_rate=dp.learning_rate,
            epochs=dp.epochs,
            seed=derive_seed(seed, "training"),
        ),
    )
    generator.save_model(model, ws.path("model.dptg"))
    with open(ws.path("train_metrics.jsonl"), "w", encoding="utf-8") as fh:
        for m in result.metrics:
            fh.write(json.dumps(m, sort_keys=True) + "\n")
    state = {"sigma": result.sigma, "sampling_rate": result.sampling_rate, "steps": result.steps, "n_real": len(real)}
    ws.path("train_state.json").write_text(json.dumps(state, indent=1, sort_keys=True) + "\n", encoding="utf-8")


def _stage_sample(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    model = generator.load_model(ws.path("model.dptg"))
    cfg = generator.SamplingConfig(
        top_p=config.sampling.top_p,
        temperature=config.sampling.temperature,
        max_len=config.generator.max_len,
        seed=derive_seed(seed, "sampling"),
    )
    synthetic = generator.sample(model, cfg, config.initial_samples)
    corpus_mod.save_corpus(synthetic, ws.path("synthetic.jsonl"))


def _embed_corpus(ws: Workspace, corpus_file: str, out_file: str, config: PipelineConfig, role: str) -> None:
    c = corpus_mod.load_corpus(ws.path(corpus_file), role=role)
    matrix = embeddings.EmbeddingMatrix.from_corpus(hash_embed_texts(c.texts(), config.embedding.dim), c)
    embeddings.write_embeddings(matrix, ws.path(out_file))


def _stage_embed(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    method = config.embedding.method
    if method == "hash":
        _embed_corpus(ws, "real.jsonl", "real.dpemb", config, "real")
        _embed_corpus(ws, "synthetic.jsonl", "synthetic.dpemb", config, "synthetic")
    elif method == "import":
        for src, corpus_file, dst, role in (
            (config.embedding.real_path, "real.jsonl", "real.dpemb", "real"),
            (config.embedding.synthetic_path, "synthetic.jsonl", "synthetic.dpemb", "synthetic"),
        ):
            if src is None:
                raise ConfigError("embedding.method=import requires real_path and synthetic_path")
            matrix = embeddings.read_embeddings(src)
            embeddings.validate_alignment(matrix, corpus_mod.load_corpus(ws.path(corpus_file), role=role))
            embeddings.write_embeddings(matrix, ws.path(dst))
    else:
        raise ConfigError(f"unknown embedding method {method!r}")


def _stage_cluster(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    matrix = embeddings.read_embeddings(ws.path("synthetic.dpemb"))
    model = clustering.kmeans_fit(
        matrix,
        k=config.cluster.k,
        seed=derive_seed(seed, "kmeans"),
        max_iters=config.cluster.max_iters,
        rel_tol=config.cluster.rel_tol,
        normalized=config.cluster.normalized,
    )
    clustering.save_cluster_model(model, ws.path("clusters.dpkm"))


def _stage_histogram(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    model = clustering.load_cluster_model(ws.path("clusters.dpkm"))
    real = embeddings.read_embeddings(ws.path("real.dpemb"))
    raw = histogram_mod.build_histogram(model, real)
    hist = histogram_mod.privatize(raw, sigma=config.histogram_sigma, seed=derive_seed(seed, "hist-noise"))
    histogram_mod.save_histogram(hist, ws.path("histogram.json"))


def _stage_plan(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    hist = histogram_mod.load_histogram(ws.path("histogram.json"))
    model = clustering.load_cluster_model(ws.path("clusters.dpkm"))
    sizes = clustering.group_sizes(model)
    sel = resampler.plan(hist.densities, sizes, config.target_selected)
    fractions = sizes / max(1, sizes.sum())
    estimate = resampler.required_initial_multiplier(hist.densities, fractions, config.target_selected)
    obj = {
        "t": sel.t,
        "targets": [int(v) for v in sel.targets],
        "group_sizes": [int(v) for v in sel.group_sizes],
        "deficits": [int(v) for v in sel.deficits],
        "feasible": sel.feasible,
        "total_selected": sel.total_selected,
        "required_initial_pool": estimate.required_pool_size,
        "unsatisfiable_clusters": estimate.unsatisfiable,
    }
    ws.path("plan.json").write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _stage_resample(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    plan_obj = json.loads(ws.path("plan.json").read_text(encoding="utf-8"))
    model = clustering.load_cluster_model(ws.path("clusters.dpkm"))
    sel = resampler.SelectionPlan(
        targets=np.array(plan_obj["targets"], dtype=np.int64),
        group_sizes=np.array(plan_obj["group_sizes"], dtype=np.int64),
        t=plan_obj["t"],
    )
    result = resampler.resample(
        sel, model, seed=derive_seed(seed, "resample"), with_replacement=config.resample_with_replacement
    )
    synthetic = corpus_mod.load_corpus(ws.path("synthetic.jsonl"), role="synthetic")
    chosen = [synthetic.records[i] for i in result.indices()]
    corpus_mod.save_corpus(corpus_mod.Corpus(records=chosen, role="selected"), ws.path("selected.jsonl"))
    resampler.save_selection_report(sel, result, ws.path("selection.json"))


def _stage_mauve(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    real = corpus_mod.load_corpus(ws.path("real.jsonl"), role="real")
    selected = corpus_mod.load_corpus(ws.path("selected.jsonl"), role="selected")
    h_sel, h_real = divergence.unigram_histograms(selected, real)
    unigram = divergence.mauve_score(h_sel, h_real, c=config.mauve.c_unigram, lambda_grid=config.mauve.lambda_grid)

    real_emb = embeddings.read_embeddings(ws.path("real.dpemb"))
    syn_emb = embeddings.read_embeddings(ws.path("synthetic.dpemb"))
    sel_report = json.loads(ws.path("selection.json").read_text(encoding="utf-8"))
    synthetic = corpus_mod.load_corpus(ws.path("synthetic.jsonl"), role="synthetic")
    index_of = {rid: i for i, rid in enumerate(synthetic.ids())}
    sel_rows = np.array([index_of[rid] for rid in selected.ids()], dtype=np.int64)
    bins = min(config.mauve.bins, len(sel_rows) + real_emb.count)
    hp, hq = divergence.cluster_histograms(
        syn_emb.data[sel_rows], real_emb, bins=bins, seed=derive_seed(seed, "mauve-quantize")
    )
    embedded = divergence.mauve_score(hp, hq, c=config.mauve.c_embedding, lambda_grid=config.mauve.lambda_grid)
    obj = {
        "unigram": {"score": unigram.score, "c": unigram.c, "frontier": unigram.to_dict()["frontier"]},
        "embedding_cluster": {
            "score": embedded.score,
            "c": embedded.c,
            "bins": bins,
            "frontier": embedded.to_dict()["frontier"],
        },
        "selected_size": len(selected),
        "actual_vs_target": [sel_report["actual_size"], sel_report["t"]],
    }
    ws.path("mauve.json").write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _stage_account(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    state = json.loads(ws.path("train_state.json").read_text(encoding="utf-8"))
    delta = config.budget.delta
    n_real = state["n_real"]
    if delta >= 0.1 / n_real and not config.budget.allow_large_delta:
        raise ConfigError(
            f"delta={delta} is not below 0.1/N={0.1 / n_real:.2e}; set budget.allow_large_delta to override"
        )
    if state["sigma"] <= 0 or config.histogram_sigma <= 0:
        # an unnoised step anywhere voids the end-to-end guarantee
        obj = {
            "epsilon": None,
            "delta": delta,
            "unbounded": True,
            "reason": "training noise multiplier and histogram sigma must both be positive",
        }
    else:
        report = training_budget(
            sigma=state["sigma"],
            sampling_rate=state["sampling_rate"],
            steps=state["steps"],
            delta=delta,
            histogram_sigma=config.histogram_sigma,
            grid_spacing=config.budget.grid_spacing,
        )
        obj = report.to_dict()
        obj["unbounded"] = False
    ws.path("budget.json").write_text(json.dumps(obj, indent=1) + "\n", encoding="utf-8")


def _stage_canary(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    assert config.canary is not None
    spec = leakage_mod.CanarySpec(
        template=config.canary.template,
        secret=config.canary.secret,
        repetitions=config.canary.repetitions,
        candidate_pool_size=config.canary.candidate_pool_size,
    )
    real = _load_real(ws)
    injected = leakage_mod.inject(real, spec, seed=derive_seed(seed, "inject"))
    model = generator.ToyLanguageModel.initialize(
        seed=derive_seed(seed, "canary-model"),
        embed_dim=config.generator.embed_dim,
        hidden_dim=config.generator.hidden_dim,
        max_len=config.generator.max_len,
    )
    dp = config.dp
    generator.train(
        model,
        injected,
        generator.DpAdamConfig(
            clip_threshold=dp.clip_threshold,
            noise_multiplier=dp.noise_multiplier,
            batch_size=dp.batch_size,
            learning_rate=dp.learning_rate,
            epochs=dp.epochs,
            seed=derive_seed(seed, "canary-training"),
        ),
    )
    sampling = generator.SamplingConfig(
        top_p=config.sampling.top_p,
        temperature=config.sampling.temperature,
        max_len=config.generator.max_len,
        seed=derive_seed(seed, "canary-scan"),
    )
    report = leakage_mod.evaluate_canary(
        model, spec, sampling, seed=derive_seed(seed, "canary-rank"), scan_count=config.canary.scan_count
    )
    ws.path("leakage.json").write_text(json.dumps(report.to_dict(), indent=1) + "\n", encoding="utf-8")


def _stage_pii(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    assert config.pii is not None
    real = _load_real(ws)
    endpoint = pii_mod.EndpointConfig(
        base_url=config.pii.base_url,
        model=config.pii.model,
        api_key_env=config.pii.api_key_env,
        max_concurrency=config.pii.max_concurrency,
        max_retries=config.pii.max_retries,
    )
    report = pii_mod.screen_corpus(real, endpoint, demonstrations=config.pii.demonstrations)
    report.save(ws.path("pii.json"))


def _stage_report(config: PipelineConfig, ws: Workspace, seed: int) -> None:
    out: dict = {"config_fingerprint": config.fingerprint()}
    real = _load_real(ws)
    out["n_real"] = len(real)
    synthetic = corpus_mod.load_corpus(ws.path("synthetic.jsonl"), role="synthetic")
    out["n_initial_synthetic"] = len(synthetic)
    sel_report = json.loads(ws.path("selection.json").read_text(encoding="utf-8"))
    out["selection"] = {
        "target": sel_report["t"],
        "actual_size": sel_report["actual_size"],
        "deficits_total": sum(sel_report["deficits"]),
        "replacement_used": sel_report["replacement_used"],
    }
    mauve_obj = json.loads(ws.path("mauve.json").read_text(encoding="utf-8"))
    out["mauve"] = {
        k: ({kk: vv for kk, vv in v.items() if kk != "frontier"} if isinstance(v, dict) else v)
        for k, v in mauve_obj.items()
    }
    out["budget"] = json.loads(ws.path("budget.json").read_text(encoding="utf-8"))
    if ws.path("leakage.json").exists():
        out["leakage"] = json.loads(ws.path("leakage.json").read_text(encoding="utf-8"))
    else:
        out["leakage"] = "skipped"
    if ws.path("pii.json").exists():
        pii_report = json.loads(ws.path("pii.json").read_text(encoding="utf-8"))
        out["pii"] = {
            "category_counts": pii_report["category_counts"],
            "instructions_with_findings": pii_report["instructions_with_findings"],
        }
    else:
        out["pii"] = "skipped"
    ws.path("report.json").write_text(json.dumps(out, indent=1) + "\n", encoding="utf-8")


def _const(names: list[str]) -> Callable[[PipelineConfig], list[str]]:
    return lambda config: names


STAGES: dict[str, Stage] = {
    "preprocess": Stage(
        "preprocess",
        inputs=_const([]),
        outputs=_const(["real.jsonl"]),
        run=_stage_preprocess,
        reads_real=True,
    ),
    "train": Stage(
        "train",
        inputs=_const(["real.jsonl"]),
        outputs=_const(["model.dptg", "train_metrics.jsonl", "train_state.json"]),
        run=_stage_train,
        reads_real=True,
        dp_ledgered=True,
    ),
    "sample": Stage(
        "sample",
        inputs=_const(["model.dptg"]),
        outputs=_const(["synthetic.jsonl"]),
        run=_stage_sample,
    ),
    "embed": Stage(
        "embed",
        inputs=_const(["real.jsonl", "synthetic.jsonl"]),
        outputs=_const(["real.dpemb", "synthetic.dpemb"]),
        run=_stage_embed,
        reads_real=True,
        released_output_sources={"synthetic.dpemb": ["synthetic.jsonl"]},
    ),
    "cluster": Stage(
        "cluster",
        inputs=_const(["synthetic.dpemb"]),
        outputs=_const(["clusters.dpkm"]),
        run=_stage_cluster,
    ),
    "histogram": Stage(
        "histogram",
        inputs=_const(["clusters.dpkm", "real.dpemb"]),
        outputs=_const(["histogram.json"]),
        run=_stage_histogram,
        reads_real=True,
        dp_ledgered=True,
    ),
    "plan": Stage(
        "plan",
        inputs=_const(["histogram.json", "clusters.dpkm"]),
        outputs=_const(["plan.json"]),
        run=_stage_plan,
    ),
    "resample": Stage(
        "resample",
        inputs=_const(["plan.json", "clusters.dpkm", "synthetic.jsonl"]),
        outputs=_const(["selected.jsonl", "selection.json"]),
        run=_stage_resample,
    ),
    "mauve": Stage(
        "mauve",
        inputs=_const(["real.jsonl", "selected.jsonl", "real.dpemb", "synthetic.dpemb", "selection.json", "synthetic.jsonl"]),
        outputs=_const(["mauve.json"]),
        run=_stage_mauve,
        reads_real=True,
        evaluation_only=True,
    ),
    "account": Stage(
        "account",
        inputs=_const(["train_state.json"]),
        outputs=_const(["budget.json"]),
        run=_stage_account,
    ),
    "canary": Stage(
        "canary",
        inputs=_const(["real.jsonl"]),
        outputs=_const(["leakage.json"]),
        run=_stage_canary,
        reads_real=True,
        evaluation_only=True,
        optional=True,
    ),
    "pii-scan": Stage(
        "pii-scan",
        inputs=_const(["real.jsonl"]),
        outputs=_const(["pii.json"]),
        run=_stage_pii,
        reads_real=True,
        evaluation_only=True,
        optional=True,
    ),
    "report": Stage(
        "report",
        inputs=_const(["real.jsonl", "synthetic.jsonl", "selection.json", "mauve.json", "budget.json"]),
        outputs=_const(["report.json"]),
        run=_stage_report,
        reads_real=True,
        evaluation_only=True,
    ),
}

RUN_ALL_ORDER = [
    "preprocess",
    "train",
    "sample",
    "embed",
    "cluster",
    "histogram",
    "plan",
    "resample",
    "mauve",
    "account",
    "canary",
    "pii-scan",
    "report",
]

# artifacts derived from the real corpus without DP protection; they never
# leave the pipeline (unnoised training metrics count: loss traces are real
# -data statistics the DP guarantee does not cover)
PRIVATE_ARTIFACTS = {"real.jsonl", "real.dpemb", "train_metrics.jsonl"}
# terminal reports, not part of the released artifact set
EVALUATION_ARTIFACTS = {"mauve.json", "leakage.json", "pii.json", "report.json"}


def check_privacy_graph(stages: dict[str, Stage] | None = None) -> None:
    """Static check: no released artifact derives from unledgered real data.

    A stage touching the real corpus or a private derivative must be
    DP-ledgered (its outputs carry accounted noise), evaluation-only (its
    outputs are terminal reports), or must prove that each of its released
    outputs derives solely from released inputs.
    """
    stages = STAGES if stages is None else stages
    config = PipelineConfig()
    for stage in stages.values():
        touches_private = stage.reads_real or any(name in PRIVATE_ARTIFACTS for name in stage.inputs(config))
        if not touches_private:
            continue
        if stage.dp_ledgered or stage.evaluation_only:
            continue
        for out in stage.outputs(config):
            if out in PRIVATE_ARTIFACTS or out in EVALUATION_ARTIFACTS:
                continue
            sources = stage.released_output_sources.get(out)
            if sources is None:
                raise ConfigError(
                    f"stage {stage.name!r} reads real data but released output {out!r} "
                    "has no declared provenance and the stage is neither DP-ledgered nor evaluation-only"
                )
            tainted = [s for s in sources if s in PRIVATE_ARTIFACTS]
            if tainted:
                raise ConfigError(f"released output {out!r} of stage {stage.name!r} derives from private inputs {tainted}")


def run_stage(config: PipelineConfig, ws: Workspace, name: str) -> dict:
    """Execute one stage after verifying its inputs against the manifest."""
    if name not in STAGES:
        raise ConfigError(f"unknown stage {name!r}; expected one of {sorted(STAGES)}")
    check_privacy_graph()
    stage = STAGES[name]
    if stage.name == "canary" and config.canary is None:
        raise ConfigError("canary stage requires a canary section in the config")
    if stage.name == "pii-scan" and config.pii is None:
        raise ConfigError("pii-scan stage requires a pii section in the config")
    manifest = ws.load_manifest()
    input_hashes: dict[str, str] = {}
    produced_by = {
        out: entry
        for stage_name, entry in manifest["stages"].items()
        for out in entry.get("outputs", {})
    }
    for rel in stage.inputs(config):
        path = ws.path(rel)
        if not path.exists():
            raise ConfigError(f"stage {name!r} requires missing upstream artifact {rel!r}")
        digest = _sha256(path)
        if rel in produced_by:
            recorded = produced_by[rel]["outputs"][rel]
            if digest != recorded:
                raise StaleInputError(
                    f"input {rel!r} no longer matches the manifest hash of its producer "
                    f"(expected {recorded[:12]}, found {digest[:12]})"
                )
        input_hashes[rel] = digest
    seed = derive_seed(config.master_seed, "stage", name)
    stage.run(config, ws, seed)
    output_hashes = {}
    for rel in stage.outputs(config):
        path = ws.path(rel)
        if not path.exists():
            raise ConfigError(f"stage {name!r} failed to produce {rel!r}")
        output_hashes[rel] = _sha256(path)
    entry = {
        "inputs": input_hashes,
        "outputs": output_hashes,
        "seed": seed,
        "config_fingerprint": config.fingerprint(),
        "version": 1,
    }
    manifest["stages"][name] = entry
    ws.save_manifest(manifest)
    return entry


def run_all(config: PipelineConfig, ws: Workspace) -> dict:
    entries = {}
    for name in RUN_ALL_ORDER:
        stage = STAGES[name]
        if stage.optional:
            if name == "canary" and config.canary is None:
                continue
            if name == "pii-scan" and config.pii is None:
                continue
        entries[name] = run_stage(config, ws, name)
    return entries
