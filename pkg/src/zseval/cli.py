"""Stage-based pipeline CLI over a single run directory.

Every stage reads files, writes files, and records a marker with the content
hashes of its inputs, so completed stages are no-ops on rerun and any stage
can be resumed after an interruption. `--mock` swaps both remote services
for local deterministic servers, making full runs possible offline.

Exit codes: 0 ok, 2 configuration error, 3 missing stage input,
4 transport exhaustion.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
from concurrent.futures import ThreadPoolExecutor
from contextlib import contextmanager
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np
from PIL import Image

from . import ensemble, manifest, media, metrics, parsing, prompts, store, vlm
from .mockserver import MockEmbeddingService, MockVlmService

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_STAGE = 3
EXIT_TRANSPORT = 4

VLM_METHOD = "vlm"


class ConfigError(Exception):
    pass


class StageInputMissing(Exception):
    def __init__(self, what: str, required_command: str):
        super().__init__(f"{what} not found; run `zseval {required_command}` first")
        self.required_command = required_command


@dataclass
class RunConfig:
    run_dir: Path
    manifest_path: Path
    mode: str = "gpt"
    sentence_count: int = 20
    frame_count: int = 8
    view_count: int = 6
    dataset_context: str = "the dataset's visual domain"
    embed_endpoint: str | None = None
    embed_store: Path | None = None
    vlm_endpoint: str | None = None
    vlm_model: str = "gpt-4-vision-preview"
    gen_model: str = "gpt-4-1106-preview"
    detail_level: str = "low"
    downscale: int | None = 512
    mock: bool = False
    mock_dimension: int = 64
    resume: bool = True
    gen_temperature: float = 0.7
    gen_max_retries: int = 3
    price_per_1k_prompt: float = 0.0
    price_per_1k_completion: float = 0.0
    transport: vlm.TransportPolicy = field(default_factory=vlm.TransportPolicy)
    ensemble: ensemble.EnsembleConfig = field(default_factory=ensemble.EnsembleConfig)
    match: parsing.MatchPolicy = field(default_factory=parsing.MatchPolicy)

    def __post_init__(self):
        if self.mode not in prompts.MODES:
            raise ConfigError(f"mode must be one of {prompts.MODES}")
        if self.sentence_count < 1 or self.frame_count < 1 or self.view_count < 1:
            raise ConfigError("k, frames, and views must be positive")

    # --- derived paths -----------------------------------------------------
    @property
    def prompts_path(self) -> Path:
        return self.run_dir / "prompts" / f"{self.mode}.txt"

    @property
    def media_dir(self) -> Path:
        return self.run_dir / "media"

    @property
    def text_store_path(self) -> Path:
        return self.run_dir / "embeddings" / f"text_{self.mode}.zseb"

    @property
    def vision_store_path(self) -> Path:
        return self.run_dir / "embeddings" / "vision.zseb"

    @property
    def embed_cache_path(self) -> Path:
        return self.run_dir / "embeddings" / "cache.zseb"

    @property
    def results_dir(self) -> Path:
        return self.run_dir / "results"

    @property
    def report_dir(self) -> Path:
        return self.run_dir / "report"

    def classify_log(self, mode: str) -> Path:
        return self.results_dir / f"classify_{mode}.log"

    @property
    def vlm_log(self) -> Path:
        return self.results_dir / "vlm.log"


def _policy_from(doc: dict, cls, current):
    if not doc:
        return current
    fields = {f: getattr(current, f) for f in current.__dataclass_fields__}
    unknown = set(doc) - set(fields)
    if unknown:
        raise ConfigError(f"unknown {cls.__name__} keys: {sorted(unknown)}")
    fields.update(doc)
    try:
        return cls(**fields)
    except ValueError as exc:
        raise ConfigError(str(exc)) from exc


def load_config(args: argparse.Namespace) -> RunConfig:
    doc: dict = {}
    if args.config:
        path = Path(args.config)
        if not path.exists():
            raise ConfigError(f"config file {path} does not exist")
        try:
            doc = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config file {path} is not valid JSON: {exc}") from exc

    def pick(flag, key, default=None):
        if flag is not None:
            return flag
        return doc.get(key, default)

    run_dir = pick(args.run_dir, "run_dir")
    dataset = pick(args.dataset, "dataset")
    if not run_dir:
        raise ConfigError("a run directory is required (--run-dir or config run_dir)")
    if not dataset:
        raise ConfigError("a dataset manifest is required (--dataset or config dataset)")
    manifest_path = Path(dataset)
    if not manifest_path.exists():
        raise ConfigError(f"dataset manifest {manifest_path} does not exist")

    try:
        cfg = RunConfig(
            run_dir=Path(run_dir),
            manifest_path=manifest_path,
            mode=pick(args.mode, "mode", "gpt"),
            sentence_count=int(pick(args.k, "k", 20)),
            frame_count=int(pick(args.frames, "frames", 8)),
            view_count=int(pick(args.views, "views", 6)),
            dataset_context=pick(args.context, "dataset_context", "the dataset's visual domain"),
            embed_endpoint=pick(args.embed_endpoint, "embed_endpoint"),
            embed_store=Path(p) if (p := pick(args.embed_store, "embed_store")) else None,
            vlm_endpoint=pick(args.vlm_endpoint, "vlm_endpoint"),
            vlm_model=pick(args.vlm_model, "vlm_model", "gpt-4-vision-preview"),
            gen_model=pick(args.gen_model, "gen_model", "gpt-4-1106-preview"),
            detail_level=doc.get("detail_level", "low"),
            downscale=doc.get("downscale", 512),
            mock=bool(args.mock or doc.get("mock", False)),
            mock_dimension=int(doc.get("mock_dimension", 64)),
            resume=args.resume if args.resume is not None else doc.get("resume", True),
            gen_temperature=float(doc.get("gen", {}).get("temperature", 0.7)),
            gen_max_retries=int(doc.get("gen", {}).get("max_retries", 3)),
            price_per_1k_prompt=float(doc.get("prices", {}).get("prompt_per_1k", 0.0)),
            price_per_1k_completion=float(doc.get("prices", {}).get("completion_per_1k", 0.0)),
            transport=_policy_from(doc.get("transport", {}), vlm.TransportPolicy, vlm.TransportPolicy()),
            ensemble=_policy_from(doc.get("ensemble", {}), ensemble.EnsembleConfig, ensemble.EnsembleConfig()),
            match=_policy_from(doc.get("match", {}), parsing.MatchPolicy, parsing.MatchPolicy()),
        )
    except (TypeError, ValueError) as exc:
        raise ConfigError(f"bad configuration value: {exc}") from exc
    return cfg


# --- stage markers ---------------------------------------------------------


def _sha256_file(path: Path) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as f:
        for chunk in iter(lambda: f.read(1 << 20), b""):
            h.update(chunk)
    return h.hexdigest()


def _marker_path(cfg: RunConfig, stage: str) -> Path:
    return cfg.run_dir / "stages" / f"{stage}.json"


def _fingerprint(files: dict[str, Path], params: dict) -> dict:
    return {
        "files": {name: _sha256_file(path) for name, path in files.items()},
        "params": params,
    }


def _stage_done(cfg: RunConfig, stage: str, fingerprint: dict, outputs: list[Path]) -> bool:
    if not cfg.resume:
        return False
    marker = _marker_path(cfg, stage)
    if not marker.exists():
        return False
    try:
        recorded = json.loads(marker.read_text(encoding="utf-8"))
    except json.JSONDecodeError:
        return False
    if recorded.get("fingerprint") != fingerprint:
        return False
    return all(out.exists() for out in outputs)


def _mark_stage(cfg: RunConfig, stage: str, fingerprint: dict, outputs: list[Path]) -> None:
    marker = _marker_path(cfg, stage)
    marker.parent.mkdir(parents=True, exist_ok=True)
    marker.write_text(
        json.dumps(
            {
                "stage": stage,
                "fingerprint": fingerprint,
                "outputs": [str(o.relative_to(cfg.run_dir)) for o in outputs],
            },
            indent=2,
            sort_keys=True,
        )
        + "\n",
        encoding="utf-8",
    )


def _endpoint_identity(cfg: RunConfig, endpoint: str | None) -> str:
    return "mock" if cfg.mock else (endpoint or "")


# --- service wiring --------------------------------------------------------


@contextmanager
def _chat_endpoint(cfg: RunConfig):
    if cfg.mock:
        service = MockVlmService().start()
        try:
            yield service.url + "/v1/chat/completions"
        finally:
            service.stop()
    else:
        if not cfg.vlm_endpoint:
            raise ConfigError("a chat endpoint is required (vlm_endpoint or --mock)")
        yield cfg.vlm_endpoint


@contextmanager
def _embedding_provider(cfg: RunConfig):
    if cfg.embed_store is not None:
        if not cfg.embed_store.exists():
            raise ConfigError(f"embedding store {cfg.embed_store} does not exist")
        yield store.StoreBackedProvider(store.read_store(cfg.embed_store))
        return
    if cfg.mock:
        service = MockEmbeddingService(dimension=cfg.mock_dimension).start()
        try:
            yield store.RemoteEmbeddingProvider(service.url + "/v1/embeddings")
        finally:
            service.stop()
        return
    if not cfg.embed_endpoint:
        raise ConfigError("an embedding endpoint is required (embed_endpoint, embed_store, or --mock)")
    yield store.RemoteEmbeddingProvider(cfg.embed_endpoint)


# --- commands --------------------------------------------------------------


def cmd_gen_descriptions(cfg: RunConfig) -> None:
    data = manifest.load_manifest(cfg.manifest_path)
    params = {
        "mode": cfg.mode,
        "k": cfg.sentence_count,
        "model": cfg.gen_model,
        "context": cfg.dataset_context,
        "temperature": cfg.gen_temperature,
        "endpoint": _endpoint_identity(cfg, cfg.vlm_endpoint),
    }
    fingerprint = _fingerprint({"manifest": cfg.manifest_path}, params)
    outputs = [cfg.prompts_path]
    stage = f"gen-descriptions-{cfg.mode}"
    if _stage_done(cfg, stage, fingerprint, outputs):
        print("gen-descriptions: up to date")
        return

    categories = data.category_set
    if cfg.mode in ("baseline", "handcrafted"):
        prompt_set = prompts.build_prompt_set(categories, cfg.mode)
    else:
        policy = prompts.GenerationPolicy(
            model_name=cfg.gen_model,
            sentence_count=cfg.sentence_count,
            max_retries=cfg.gen_max_retries,
            temperature=cfg.gen_temperature,
        )
        with _chat_endpoint(cfg) as endpoint:
            transport = vlm.ChatTransport(endpoint, cfg.gen_model, cfg.transport)
            blocks = [
                prompts.generate_category_descriptions(
                    name, cfg.dataset_context, policy, transport.chat
                )
                for name in categories.categories
            ]
        prompt_set = prompts.build_prompt_set(categories, cfg.mode, gpt_sentences=blocks)

    cfg.prompts_path.parent.mkdir(parents=True, exist_ok=True)
    prompts.write_prompt_set(prompt_set, cfg.prompts_path)
    _mark_stage(cfg, stage, fingerprint, outputs)
    print(f"gen-descriptions: wrote {cfg.prompts_path}")


def _sample_media_dir(cfg: RunConfig, hashed_id: str) -> Path:
    return cfg.media_dir / hashed_id


def _media_files(cfg: RunConfig, hashed_id: str) -> list[Path]:
    directory = _sample_media_dir(cfg, hashed_id)
    if not directory.is_dir():
        return []
    return sorted(p for p in directory.iterdir() if p.suffix == ".png")


def cmd_prepare_media(cfg: RunConfig) -> None:
    data = manifest.load_manifest(cfg.manifest_path)
    params = {"frames": cfg.frame_count, "views": cfg.view_count}
    fingerprint = _fingerprint({"manifest": cfg.manifest_path}, params)
    outputs = [_sample_media_dir(cfg, s.hashed_id) for s in data.samples]
    if _stage_done(cfg, "prepare-media", fingerprint, outputs):
        print("prepare-media: up to date")
        return

    sampler = media.FrameSamplerConfig(frame_count=cfg.frame_count)
    renderer = media.RenderConfig(view_count=cfg.view_count)
    for sample in data.samples:
        out_dir = _sample_media_dir(cfg, sample.hashed_id)
        out_dir.mkdir(parents=True, exist_ok=True)
        if sample.modality == "image":
            with Image.open(sample.source_path) as im:
                im.convert("RGB").save(out_dir / "000.png")
        elif sample.modality == "video":
            for i, frame in enumerate(media.load_frames(sample, sampler)):
                frame.save(out_dir / f"{i:03d}.png")
        else:
            cloud = media.load_off(sample.source_path)
            for i, view in enumerate(media.render_depth_views(cloud, renderer)):
                media.save_grayscale_png(view, out_dir / f"{i:03d}.png")
    _mark_stage(cfg, "prepare-media", fingerprint, outputs)
    print(f"prepare-media: prepared {len(data.samples)} samples under {cfg.media_dir}")


def _require(path: Path, what: str, command: str) -> Path:
    if not path.exists():
        raise StageInputMissing(what, command)
    return path


def cmd_embed(cfg: RunConfig) -> None:
    _require(cfg.prompts_path, f"prompt set {cfg.prompts_path}", "gen-descriptions")
    media_marker = _require(
        _marker_path(cfg, "prepare-media"), "prepared media", "prepare-media"
    )
    params = {
        "endpoint": _endpoint_identity(cfg, cfg.embed_endpoint),
        "store": str(cfg.embed_store or ""),
        "dimension": cfg.mock_dimension if cfg.mock else None,
        "mode": cfg.mode,
    }
    fingerprint = _fingerprint(
        {
            "manifest": cfg.manifest_path,
            "prompts": cfg.prompts_path,
            "media": media_marker,
        },
        params,
    )
    outputs = [cfg.text_store_path, cfg.vision_store_path]
    stage = f"embed-{cfg.mode}"
    if _stage_done(cfg, stage, fingerprint, outputs):
        print("embed: up to date")
        return

    data = manifest.load_manifest(cfg.manifest_path)
    prompt_set = prompts.read_prompt_set(cfg.prompts_path)
    with _embedding_provider(cfg) as provider:
        embedder = store.CachedEmbedder(provider, cfg.embed_cache_path)
        dimension = provider.dimension()

        text_store = store.EmbeddingStore(dimension)
        for i, block in enumerate(prompt_set.sentences):
            vectors = embedder.embed("text", list(block))
            for j, vec in enumerate(vectors):
                text_store.add(f"c{i:05d}k{j:04d}", vec)
        store.write_store(text_store, cfg.text_store_path)

        vision_store = store.EmbeddingStore(dimension)
        for sample in data.samples:
            files = _media_files(cfg, sample.hashed_id)
            if not files:
                raise StageInputMissing(
                    f"media for sample {sample.hashed_id}", "prepare-media"
                )
            vectors = embedder.embed("image", [p.read_bytes() for p in files])
            vision_store.add(sample.hashed_id, ensemble.pool_vision_embedding(vectors))
        store.write_store(vision_store, cfg.vision_store_path)

    _mark_stage(cfg, stage, fingerprint, outputs)
    print(
        f"embed: {len(prompt_set.category_names)} categories x {prompt_set.sentence_count} "
        f"sentences, {len(data.samples)} samples (D={dimension})"
    )


def cmd_classify(cfg: RunConfig) -> None:
    _require(cfg.prompts_path, f"prompt set {cfg.prompts_path}", "gen-descriptions")
    _require(cfg.text_store_path, f"text embeddings {cfg.text_store_path}", "embed")
    _require(cfg.vision_store_path, f"vision embeddings {cfg.vision_store_path}", "embed")
    params = {"mode": cfg.mode, "logit_scale": cfg.ensemble.logit_scale, "axis": cfg.ensemble.softmax_axis}
    fingerprint = _fingerprint(
        {
            "manifest": cfg.manifest_path,
            "text": cfg.text_store_path,
            "vision": cfg.vision_store_path,
        },
        params,
    )
    log_path = cfg.classify_log(cfg.mode)
    if _stage_done(cfg, f"classify-{cfg.mode}", fingerprint, [log_path]):
        print("classify: up to date")
        return

    data = manifest.load_manifest(cfg.manifest_path)
    prompt_set = prompts.read_prompt_set(cfg.prompts_path)
    text_store = store.read_store(cfg.text_store_path)
    vision_store = store.read_store(cfg.vision_store_path)

    c_count = len(prompt_set.category_names)
    k_count = prompt_set.sentence_count
    try:
        text = np.stack(
            [
                np.stack([text_store.get(f"c{i:05d}k{j:04d}") for j in range(k_count)])
                for i in range(c_count)
            ]
        ).astype(np.float64)
    except KeyError:
        raise StageInputMissing(
            f"text embeddings matching the {cfg.mode} prompt set", "embed"
        ) from None

    lines = []
    for sample in data.samples:
        if sample.hashed_id not in vision_store:
            raise StageInputMissing(
                f"vision embedding for sample {sample.hashed_id}", "embed"
            )
        vision = vision_store.get(sample.hashed_id).astype(np.float64)
        sims = ensemble.score_matrix(vision, text)
        scores = ensemble.ensemble_scores(sims, cfg.ensemble)
        prediction = ensemble.top_k(scores, k=min(5, c_count))
        outcome = parsing.ParseOutcome("ok", prediction)
        lines.append(parsing.format_log_line(sample.hashed_id, outcome))

    log_path.parent.mkdir(parents=True, exist_ok=True)
    log_path.write_text("\n".join(lines) + "\n", encoding="utf-8")
    _mark_stage(cfg, f"classify-{cfg.mode}", fingerprint, [log_path])
    print(f"classify: scored {len(lines)} samples -> {log_path}")


def cmd_eval_vlm(cfg: RunConfig) -> None:
    media_marker = _require(
        _marker_path(cfg, "prepare-media"), "prepared media", "prepare-media"
    )
    params = {
        "model": cfg.vlm_model,
        "detail": cfg.detail_level,
        "downscale": cfg.downscale,
        "endpoint": _endpoint_identity(cfg, cfg.vlm_endpoint),
        "match": [cfg.match.max_edit_distance, cfg.match.max_relative_distance],
    }
    fingerprint = _fingerprint(
        {"manifest": cfg.manifest_path, "media": media_marker}, params
    )
    outputs = [cfg.vlm_log]
    if _stage_done(cfg, "eval-vlm", fingerprint, outputs):
        print("eval-vlm: up to date")
        return

    data = manifest.load_manifest(cfg.manifest_path)
    ledger = vlm.CostLedger(cfg.price_per_1k_prompt, cfg.price_per_1k_completion)
    cache = vlm.ResponseCache(cfg.run_dir / "vlm_cache")

    with _chat_endpoint(cfg) as endpoint:
        client = vlm.VlmClient(endpoint, cfg.transport, cache=cache, ledger=ledger)

        expected_counts = {"image": 1, "video": cfg.frame_count, "pointcloud": cfg.view_count}

        def evaluate(sample: manifest.SampleRecord) -> str:
            files = _media_files(cfg, sample.hashed_id)
            if not files:
                raise StageInputMissing(
                    f"media for sample {sample.hashed_id}", "prepare-media"
                )
            request = vlm.build_vision_request(
                sample,
                [p.read_bytes() for p in files],
                data.category_set,
                model_name=cfg.vlm_model,
                detail_level=cfg.detail_level,
                downscale_to=cfg.downscale,
                expected_count=expected_counts[sample.modality],
            )
            outcome = parsing.parse_topk(
                client.execute(request), sample, data.category_set, cfg.match
            )
            return parsing.format_log_line(sample.hashed_id, outcome)

        with ThreadPoolExecutor(max_workers=cfg.transport.concurrency_limit) as pool:
            lines = list(pool.map(evaluate, data.samples))

    cfg.vlm_log.parent.mkdir(parents=True, exist_ok=True)
    cfg.vlm_log.write_text("\n".join(lines) + "\n", encoding="utf-8")
    cost_doc = {
        "prompt_tokens": ledger.prompt_tokens,
        "completion_tokens": ledger.completion_tokens,
        "network_cost": round(vlm.estimate_cost(ledger), 6),
    }
    (cfg.results_dir / "vlm_cost.json").write_text(
        json.dumps(cost_doc, indent=2, sort_keys=True) + "\n", encoding="utf-8"
    )
    _mark_stage(cfg, "eval-vlm", fingerprint, outputs)
    print(
        f"eval-vlm: {len(lines)} samples -> {cfg.vlm_log} "
        f"(network cost ${cost_doc['network_cost']:.2f}; for scale, a full "
        f"16-dataset evaluation round runs about $4000)"
    )


def _run_result_from_log(
    cfg: RunConfig, data: manifest.DatasetManifest, log_path: Path, method: str
) -> metrics.RunResult:
    labels = {s.hashed_id: s.label_index for s in data.samples}
    samples = []
    for line in log_path.read_text(encoding="utf-8").splitlines():
        if not line.strip():
            continue
        hashed_id, outcome = parsing.parse_log_line(line)
        if hashed_id not in labels:
            raise ConfigError(f"{log_path}: sample {hashed_id} not in manifest")
        samples.append(
            metrics.SampleResult(hashed_id, labels[hashed_id], outcome.prediction, outcome.status)
        )
    return metrics.RunResult(data.category_set.dataset_name, method, tuple(samples))


def cmd_report(cfg: RunConfig) -> None:
    logs: list[tuple[str, Path]] = []
    for mode in prompts.MODES:
        path = cfg.classify_log(mode)
        if path.exists():
            logs.append((mode, path))
    if cfg.vlm_log.exists():
        logs.append((VLM_METHOD, cfg.vlm_log))
    if not logs:
        raise StageInputMissing("no result logs", "classify` or `zseval eval-vlm")
    logs.sort(key=lambda pair: metrics.METHOD_ORDER.index(pair[0]))

    fingerprint = _fingerprint(
        {name: path for name, path in logs} | {"manifest": cfg.manifest_path},
        {"methods": [name for name, _ in logs]},
    )
    outputs = [cfg.report_dir / "report.csv", cfg.report_dir / "report.md"]
    if _stage_done(cfg, "report", fingerprint, outputs):
        print("report: up to date")
        return

    data = manifest.load_manifest(cfg.manifest_path)
    runs = [_run_result_from_log(cfg, data, path, method) for method, path in logs]
    table = metrics.build_result_table([runs])
    metrics.emit_report(table, "csv", outputs[0])
    metrics.emit_report(table, "markdown", outputs[1])
    _mark_stage(cfg, "report", fingerprint, outputs)
    for run in runs:
        top1 = metrics.topk_accuracy(run, 1)
        top5 = metrics.topk_accuracy(run, 5)
        print(
            f"report: {run.dataset} {run.method_label}: top-1 {top1:.1f} top-5 {top5:.1f} "
            f"(excluded: {run.excluded_refused} refused, {run.excluded_unparseable} unparseable)"
        )
    print(f"report: wrote {outputs[0]} and {outputs[1]}")


COMMANDS = {
    "gen-descriptions": cmd_gen_descriptions,
    "prepare-media": cmd_prepare_media,
    "embed": cmd_embed,
    "classify": cmd_classify,
    "eval-vlm": cmd_eval_vlm,
    "report": cmd_report,
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="zseval",
        description="Zero-shot recognition evaluation pipeline over a run directory.",
    )
    sub = parser.add_subparsers(dest="command", required=True)
    for name in COMMANDS:
        p = sub.add_parser(name)
        p.add_argument("--config", help="JSON config file")
        p.add_argument("--run-dir", help="run directory holding all stage artifacts")
        p.add_argument("--dataset", help="dataset manifest path")
        p.add_argument("--mode", choices=prompts.MODES)
        p.add_argument("--k", type=int, help="sentences per category")
        p.add_argument("--frames", type=int, help="frames sampled per video")
        p.add_argument("--views", type=int, help="rendered views per point cloud")
        p.add_argument("--context", help="dataset context for description generation")
        p.add_argument("--embed-endpoint")
        p.add_argument("--embed-store", help="precomputed embedding store path")
        p.add_argument("--vlm-endpoint")
        p.add_argument("--vlm-model")
        p.add_argument("--gen-model")
        p.add_argument("--mock", action="store_true", default=None,
                       help="use local deterministic mock services")
        p.add_argument("--resume", action=argparse.BooleanOptionalAction, default=None,
                       help="skip stages whose inputs are unchanged (default on)")
        if name == "eval-vlm":
            p.add_argument(
                "--batch-testing",
                action="store_true",
                help="request multiple samples per API call (refused: known to misalign results)",
            )
    return parser


def main(argv: list[str] | None = None) -> int:
    args = build_parser().parse_args(argv)
    try:
        if getattr(args, "batch_testing", False):
            raise ConfigError(
                "batch testing is intentionally unsupported: requests carrying "
                "multiple samples misalign, repeat, and drop predictions; use "
                "single testing (the default, one sample per request)"
            )
        cfg = load_config(args)
        COMMANDS[args.command](cfg)
    except ConfigError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except StageInputMissing as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_STAGE
    except vlm.AuthError as exc:
        print(f"error: {exc} (check the API key environment variable)", file=sys.stderr)
        return EXIT_CONFIG
    except vlm.ExhaustedRetries as exc:
        print(f"error: transport exhausted: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    except (
        manifest.ManifestError,
        prompts.PromptError,
        media.MediaError,
        store.StoreError,
        metrics.MetricsError,
        parsing.ParsingError,
    ) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except vlm.TransportError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_TRANSPORT
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
