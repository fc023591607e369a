"""Benchmark harness: tokenization, prompt templates, training, and runs.

The harness turns a plain-text corpus into character-level n-gram models,
renders dataset records through chat-style prompt templates, runs matched
autoregressive and speculative generations per (prompt, gamma), and writes
a CSV of per-prompt metrics plus a JSON aggregate.

Reported times are modeled, not measured: one target pass costs one second
and one draft pass costs ``c`` seconds.  That keeps every byte of the
reports reproducible from the config alone, which real wall clocks cannot
do, while still reflecting the relative-cost accounting the speed-up
metrics are built on.
"""

from __future__ import annotations

import csv
import json
from dataclasses import dataclass, fields
from pathlib import Path
from typing import Sequence

from mmspec.core import MultimodalPrompt, RngState, TokenId, Vocab
from mmspec.engine import (
    BlockTrace,
    SpdConfig,
    autoregressive_generate,
    spd_generate,
)
from mmspec.metrics import (
    CostModel,
    DEFAULT_DRAFT_COST,
    PromptRun,
    RunReport,
    aggregate,
    block_efficiency,
    mbsu,
    mbsu_c_scaled,
)
from mmspec.models import (
    MultimodalTargetLm,
    PromptConditionedLm,
    TextOnlyDraftLm,
    load_ngram,
    save_ngram,
    train_ngram,
)

__all__ = [
    "CSV_COLUMNS",
    "CharTokenizer",
    "DEFAULT_ALPHABET",
    "ExperimentConfig",
    "MissingFieldError",
    "PromptRecord",
    "RenderedPrompt",
    "TEMPLATES",
    "UnknownPromptError",
    "demo_corpus_path",
    "demo_dataset_path",
    "generate_for_prompt",
    "load_dataset",
    "qualitative_trace",
    "render_template",
    "run_experiment",
    "train_models",
]

DATA_DIR = Path(__file__).resolve().parent / "data"

# Character inventory for the bundled corpus and templates.  The EOS id is
# one past the last character, so vocab size is len(alphabet) + 1.
DEFAULT_ALPHABET = (
    "\n !\"'(),-.0123456789:;?"
    "ABCDEFGHIJKLMNOPQRSTUVWXYZ"
    "abcdefghijklmnopqrstuvwxyz"
)

TEMPLATES = ("plain", "chat", "caption", "sqa")

CHAT_PREAMBLE = (
    "A chat between a curious user and an artificial intelligence assistant. "
    "The assistant gives helpful, detailed, and polite answers to the user's "
    "questions."
)
CAPTION_INSTRUCTION = "Provide a detailed description of the given image"

CSV_COLUMNS = (
    "prompt_id",
    "gamma",
    "mode",
    "tokens",
    "target_calls",
    "tau",
    "mbsu",
    "mbsu_c_scaled",
    "wall_time_s",
)

# Top-level stream ids: the baseline stream ignores gamma on purpose, so the
# baseline output for a prompt is the same whichever gamma is being measured.
_STREAM_BASELINE = 0
_STREAM_SPD = 1


class MissingFieldError(ValueError):
    """Raised when a template needs a record field that is absent or empty."""


class UnknownPromptError(KeyError):
    """Raised when a prompt id is not present in the dataset."""


def demo_corpus_path() -> Path:
    """Bundled demo corpus (plain text, one sequence per line)."""
    return DATA_DIR / "corpus.txt"


def demo_dataset_path() -> Path:
    """Bundled demo dataset (JSON lines of prompt records)."""
    return DATA_DIR / "demo.jsonl"


# --------------------------------------------------------------------------- #
#  Tokenization
# --------------------------------------------------------------------------- #


class CharTokenizer:
    """Character-level codec over a fixed alphabet plus a reserved EOS id."""

    def __init__(self, alphabet: str = DEFAULT_ALPHABET) -> None:
        if len(set(alphabet)) != len(alphabet):
            raise ValueError("alphabet characters must be distinct")
        if len(alphabet) < 1:
            raise ValueError("alphabet must not be empty")
        self.alphabet = alphabet
        self._index = {ch: i for i, ch in enumerate(alphabet)}
        self.vocab = Vocab(size=len(alphabet) + 1, eos=len(alphabet))

    def encode(self, text: str) -> list[TokenId]:
        try:
            return [self._index[ch] for ch in text]
        except KeyError as exc:
            raise ValueError(f"character {exc.args[0]!r} is not in the alphabet") from None

    def decode(self, ids: Sequence[TokenId], eos_marker: str = "") -> str:
        out = []
        for i in ids:
            if i == self.vocab.eos:
                out.append(eos_marker)
            elif 0 <= i < len(self.alphabet):
                out.append(self.alphabet[i])
            else:
                raise ValueError(f"token id {i} outside vocab of size {self.vocab.size}")
        return "".join(out)


# --------------------------------------------------------------------------- #
#  Dataset records and templates
# --------------------------------------------------------------------------- #


@dataclass(frozen=True)
class PromptRecord:
    """One dataset entry: raw text or pre-tokenized ids, plus template fields."""

    prompt_id: str
    image_ctx: tuple[TokenId, ...] = ()
    prompt_text: str | None = None
    tokens: tuple[TokenId, ...] | None = None
    question: str | None = None
    options: tuple[str, ...] | None = None
    context: str | None = None

    def __post_init__(self) -> None:
        object.__setattr__(self, "image_ctx", tuple(self.image_ctx))
        if self.tokens is not None:
            object.__setattr__(self, "tokens", tuple(self.tokens))
        if self.options is not None:
            object.__setattr__(self, "options", tuple(self.options))
        if (self.prompt_text is None) == (self.tokens is None):
            raise ValueError(
                f"record {self.prompt_id!r} must carry exactly one of prompt_text / tokens"
            )


@dataclass(frozen=True)
class RenderedPrompt:
    """Template output: token ids plus where the image context belongs.

    ``image_pos`` records the template's image-marker position for display
    and bookkeeping; model conditioning always places the image context
    before the whole text, per the prompt type's contract.
    """

    tokens: tuple[TokenId, ...]
    image_pos: int


def _require(record: PromptRecord, field_name: str, template: str) -> str:
    value = getattr(record, field_name)
    if value is None or value == "" or value == ():
        raise MissingFieldError(
            f"template {template!r} needs non-empty {field_name!r} on record {record.prompt_id!r}"
        )
    return value


def render_template(template: str, record: PromptRecord, tokenizer: CharTokenizer) -> RenderedPrompt:
    """Render a dataset record into prompt tokens for the given template.

    Raises:
        MissingFieldError: if the template requires a field the record lacks.
        ValueError: for an unknown template id.
    """
    if template not in TEMPLATES:
        raise ValueError(f"unknown template {template!r}; expected one of {TEMPLATES}")
    if template == "plain":
        if record.tokens is not None:
            return RenderedPrompt(tuple(record.tokens), 0)
        text = _require(record, "prompt_text", template)
        return RenderedPrompt(tuple(tokenizer.encode(text)), 0)
    if template in ("chat", "caption"):
        if template == "chat":
            question = _require(record, "prompt_text", template)
        else:
            question = CAPTION_INSTRUCTION
        head = f"{CHAT_PREAMBLE}  USER: "
        tail = f" \n{question}  ASSISTANT:"
        return RenderedPrompt(tuple(tokenizer.encode(head + tail)), len(head))
    # sqa: multiple-choice question block; the image precedes the question.
    question = _require(record, "question", template)
    options = _require(record, "options", template)
    if record.context is None:
        raise MissingFieldError(
            f"template 'sqa' needs 'context' on record {record.prompt_id!r} (may be empty)"
        )
    option_text = " ".join(f"({i}) {opt}" for i, opt in enumerate(options))
    body = (
        f"Question: {question}\n"
        f"Options: {option_text}\n"
        f"Context: {record.context}\n"
        "Answer: The answer is"
    )
    return RenderedPrompt(tuple(tokenizer.encode(body)), 0)


def load_dataset(path: str | Path) -> list[PromptRecord]:
    """Read prompt records from a JSON-lines file.

    Raises:
        ValueError: on malformed lines, duplicate ids, or an empty dataset,
            with the offending line number in the message.
    """
    path = Path(path)
    records: list[PromptRecord] = []
    seen: set[str] = set()
    for lineno, line in enumerate(path.read_text(encoding="utf-8").splitlines(), start=1):
        if not line.strip():
            continue
        try:
            obj = json.loads(line)
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}:{lineno}: not valid JSON ({exc})") from exc
        if not isinstance(obj, dict) or "id" not in obj:
            raise ValueError(f"{path}:{lineno}: expected an object with an 'id' field")
        known = {"id", "image_ctx", "prompt_text", "tokens", "question", "options", "context"}
        extra = set(obj) - known
        if extra:
            raise ValueError(f"{path}:{lineno}: unknown fields {sorted(extra)}")
        try:
            rec = PromptRecord(
                prompt_id=str(obj["id"]),
                image_ctx=tuple(int(t) for t in obj.get("image_ctx", ())),
                prompt_text=obj.get("prompt_text"),
                tokens=tuple(int(t) for t in obj["tokens"]) if "tokens" in obj else None,
                question=obj.get("question"),
                options=tuple(str(o) for o in obj["options"]) if "options" in obj else None,
                context=obj.get("context"),
            )
        except (TypeError, ValueError) as exc:
            raise ValueError(f"{path}:{lineno}: {exc}") from exc
        if rec.prompt_id in seen:
            raise ValueError(f"{path}:{lineno}: duplicate prompt id {rec.prompt_id!r}")
        seen.add(rec.prompt_id)
        records.append(rec)
    if not records:
        raise ValueError(f"{path}: dataset has no records")
    return records


# --------------------------------------------------------------------------- #
#  Experiment configuration
# --------------------------------------------------------------------------- #


@dataclass
class ExperimentConfig:
    """Everything a benchmark run depends on, resolvable up front."""

    target_model: str
    draft_model: str
    dataset: str
    gammas: tuple[int, ...] = (3, 5)
    mode: str = "greedy"
    max_new_tokens: int = 64
    seed: int = 0
    template: str = "chat"
    cost_c: float = DEFAULT_DRAFT_COST
    draft_uses_image: bool = False
    stop_on_eos: bool = True
    alphabet: str = DEFAULT_ALPHABET

    def __post_init__(self) -> None:
        self.gammas = tuple(int(g) for g in self.gammas)
        if not self.gammas or any(g < 1 for g in self.gammas):
            raise ValueError(f"gammas must be a non-empty list of ints >= 1, got {self.gammas}")
        if self.mode not in ("greedy", "stochastic"):
            raise ValueError(f"mode must be 'greedy' or 'stochastic', got {self.mode!r}")
        if self.max_new_tokens < 1:
            raise ValueError(f"max_new_tokens must be >= 1, got {self.max_new_tokens}")
        if self.template not in TEMPLATES:
            raise ValueError(f"unknown template {self.template!r}")
        CostModel(self.cost_c)  # bounds check

    @classmethod
    def from_dict(cls, obj: dict, base_dir: str | Path | None = None) -> "ExperimentConfig":
        """Build a config from parsed JSON; unknown keys are an error.

        Relative model/dataset paths are resolved against ``base_dir`` when
        given (the config file's directory, for file-based configs).
        """
        names = {f.name for f in fields(cls)}
        extra = set(obj) - names
        if extra:
            raise ValueError(f"unknown config fields {sorted(extra)}")
        missing = {"target_model", "draft_model", "dataset"} - set(obj)
        if missing:
            raise ValueError(f"config is missing required fields {sorted(missing)}")
        cfg = cls(**obj)
        if base_dir is not None:
            base = Path(base_dir)
            for name in ("target_model", "draft_model", "dataset"):
                p = Path(getattr(cfg, name))
                if not p.is_absolute():
                    setattr(cfg, name, str(base / p))
        return cfg

    @classmethod
    def from_file(cls, path: str | Path) -> "ExperimentConfig":
        path = Path(path)
        try:
            obj = json.loads(path.read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ValueError(f"{path}: not valid JSON ({exc})") from exc
        if not isinstance(obj, dict):
            raise ValueError(f"{path}: config must be a JSON object")
        return cls.from_dict(obj, base_dir=path.parent)

    def summary(self) -> dict:
        """Stable config echo for reports: file names, not absolute paths."""
        return {
            "target_model": Path(self.target_model).name,
            "draft_model": Path(self.draft_model).name,
            "dataset": Path(self.dataset).name,
            "gammas": list(self.gammas),
            "mode": self.mode,
            "max_new_tokens": self.max_new_tokens,
            "seed": self.seed,
            "template": self.template,
            "cost_c": self.cost_c,
            "draft_uses_image": self.draft_uses_image,
            "stop_on_eos": self.stop_on_eos,
        }


# --------------------------------------------------------------------------- #
#  Training
# --------------------------------------------------------------------------- #


def train_models(
    corpus_path: str | Path,
    out_dir: str | Path,
    *,
    target_order: int = 3,
    draft_order: int = 2,
    target_alpha: float = 0.1,
    draft_alpha: float = 0.1,
    alphabet: str = DEFAULT_ALPHABET,
) -> tuple[Path, Path]:
    """Fit target and draft n-gram models on a text corpus and save both.

    Each non-blank corpus line becomes one training sequence ending in EOS.
    The defaults make the draft strictly weaker than the target (lower
    order), which is the interesting regime for speculative decoding; equal
    orders and alphas give the identity pair used by sanity checks.

    Returns the paths of the written target and draft model files.
    """
    tokenizer = CharTokenizer(alphabet)
    text = Path(corpus_path).read_text(encoding="utf-8")
    seqs = [
        tokenizer.encode(line) + [tokenizer.vocab.eos]
        for line in text.splitlines()
        if line.strip()
    ]
    target = train_ngram(seqs, target_order, target_alpha, tokenizer.vocab)
    draft = train_ngram(seqs, draft_order, draft_alpha, tokenizer.vocab)
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    target_path = out / "target.json"
    draft_path = out / "draft.json"
    save_ngram(target, target_path)
    save_ngram(draft, draft_path)
    return target_path, draft_path


# --------------------------------------------------------------------------- #
#  Running experiments
# --------------------------------------------------------------------------- #


@dataclass
class _RunContext:
    """Loaded models, records, and rendered prompts for one config."""

    tokenizer: CharTokenizer
    target: MultimodalTargetLm
    draft: PromptConditionedLm
    records: list[PromptRecord]
    prompts: list[MultimodalPrompt]


def _load_context(cfg: ExperimentConfig) -> _RunContext:
    tokenizer = CharTokenizer(cfg.alphabet)
    target_base = load_ngram(cfg.target_model)
    draft_base = load_ngram(cfg.draft_model)
    for name, model in (("target", target_base), ("draft", draft_base)):
        if model.vocab != tokenizer.vocab:
            raise ValueError(
                f"{name} model vocab {model.vocab} does not match tokenizer vocab {tokenizer.vocab}"
            )
    target = MultimodalTargetLm(target_base)
    draft: PromptConditionedLm = (
        MultimodalTargetLm(draft_base) if cfg.draft_uses_image else TextOnlyDraftLm(draft_base)
    )
    records = load_dataset(cfg.dataset)
    prompts = []
    for rec in records:
        for tok in rec.image_ctx:
            if not 0 <= tok < tokenizer.vocab.size:
                raise ValueError(
                    f"record {rec.prompt_id!r}: image token {tok} outside vocab of size "
                    f"{tokenizer.vocab.size}"
                )
        rendered = render_template(cfg.template, rec, tokenizer)
        prompts.append(MultimodalPrompt(image_ctx=rec.image_ctx, text=rendered.tokens))
    return _RunContext(tokenizer, target, draft, records, prompts)


def generate_for_prompt(
    target: MultimodalTargetLm,
    draft: PromptConditionedLm,
    prompt: MultimodalPrompt,
    *,
    gamma: int,
    mode: str,
    max_new_tokens: int,
    stop_on_eos: bool,
    seed: int,
    prompt_index: int,
) -> tuple[list[TokenId], list[TokenId], BlockTrace]:
    """Matched baseline and SPD generations under the run's stream layout.

    Returns ``(baseline_tokens, spd_tokens, spd_trace)``.  The baseline
    stream is independent of gamma, so the baseline output for a prompt is
    identical across the gamma sweep.
    """
    baseline_rng = RngState(seed, (_STREAM_BASELINE, prompt_index))
    baseline = autoregressive_generate(
        target, prompt, max_new_tokens, mode, baseline_rng, stop_on_eos=stop_on_eos
    )
    spd_rng = RngState(seed, (_STREAM_SPD, gamma, prompt_index))
    spd_cfg = SpdConfig(
        gamma=gamma, mode=mode, max_new_tokens=max_new_tokens, stop_on_eos=stop_on_eos
    )
    spd, trace = spd_generate(target, draft, prompt, spd_cfg, spd_rng)
    return baseline, spd, trace


def _modeled_seconds(target_calls: int, draft_calls: int, c: float) -> float:
    """Report-time model: one target pass is 1 s, one draft pass is c s."""
    return float(target_calls) + c * float(draft_calls)


def run_experiment(cfg: ExperimentConfig, out_dir: str | Path) -> RunReport:
    """Run the full benchmark and write ``report.csv`` / ``report.json``.

    For each gamma, every prompt gets an autoregressive baseline and a
    speculative run from matched seeds.  Rows are sorted by
    (prompt_id, gamma); identical configs produce byte-identical reports.
    Partially written outputs are removed on failure.
    """
    ctx = _load_context(cfg)
    cost = CostModel(cfg.cost_c)
    runs: list[PromptRun] = []
    for gamma in cfg.gammas:
        for idx, (rec, prompt) in enumerate(zip(ctx.records, ctx.prompts)):
            baseline, spd, trace = generate_for_prompt(
                ctx.target,
                ctx.draft,
                prompt,
                gamma=gamma,
                mode=cfg.mode,
                max_new_tokens=cfg.max_new_tokens,
                stop_on_eos=cfg.stop_on_eos,
                seed=cfg.seed,
                prompt_index=idx,
            )
            tau = block_efficiency(trace)
            runs.append(
                PromptRun(
                    prompt_id=rec.prompt_id,
                    gamma=gamma,
                    mode=cfg.mode,
                    tokens=len(spd),
                    target_calls=trace.target_calls,
                    draft_calls=trace.draft_calls,
                    tau=tau,
                    mbsu=mbsu(tau, gamma, cost),
                    mbsu_c_scaled=mbsu_c_scaled(tau, gamma, cost),
                    wall_time_s=_modeled_seconds(trace.target_calls, trace.draft_calls, cost.c),
                    baseline_tokens=len(baseline),
                    baseline_time_s=_modeled_seconds(len(baseline), 0, cost.c),
                )
            )
    runs.sort(key=lambda r: (r.prompt_id, r.gamma))
    aggregates = tuple(
        aggregate([r for r in runs if r.gamma == gamma]) for gamma in cfg.gammas
    )
    report = RunReport(config=cfg.summary(), runs=tuple(runs), aggregates=aggregates)
    _write_report(report, Path(out_dir))
    return report


def _fmt(value) -> str:
    return f"{value:.12g}" if isinstance(value, float) else str(value)


def _write_report(report: RunReport, out_dir: Path) -> None:
    out_dir.mkdir(parents=True, exist_ok=True)
    csv_path = out_dir / "report.csv"
    json_path = out_dir / "report.json"
    try:
        with open(csv_path, "w", encoding="utf-8", newline="") as fh:
            writer = csv.writer(fh, lineterminator="\n")
            writer.writerow(CSV_COLUMNS)
            for r in report.runs:
                writer.writerow(
                    [
                        r.prompt_id,
                        r.gamma,
                        r.mode,
                        r.tokens,
                        r.target_calls,
                        _fmt(r.tau),
                        _fmt(r.mbsu),
                        _fmt(r.mbsu_c_scaled),
                        _fmt(r.wall_time_s),
                    ]
                )
        payload = {
            "config": report.config,
            "per_gamma": [
                {
                    "gamma": a.gamma,
                    "mean_tau": a.mean_tau,
                    "mean_mbsu": a.mean_mbsu,
                    "token_rate_ratio": a.token_rate_ratio,
                }
                for a in report.aggregates
            ],
        }
        json_path.write_text(json.dumps(payload, indent=2, sort_keys=True) + "\n", encoding="utf-8")
    except BaseException:
        # Never leave half-written reports behind.
        for path in (csv_path, json_path):
            path.unlink(missing_ok=True)
        raise


# --------------------------------------------------------------------------- #
#  Qualitative trace
# --------------------------------------------------------------------------- #


def qualitative_trace(cfg: ExperimentConfig, prompt_id: str, gamma: int | None = None) -> str:
    """Annotated generation for one prompt: which tokens the draft got right.

    Draft-accepted spans print inside ``[...]``, rejected positions print
    their target-side replacement inside ``{...}``, and bonus tokens after a
    clean block print inside ``(...)``.

    Raises:
        UnknownPromptError: if ``prompt_id`` is not in the dataset.
    """
    gamma = cfg.gammas[0] if gamma is None else int(gamma)
    ctx = _load_context(cfg)
    try:
        idx = next(i for i, rec in enumerate(ctx.records) if rec.prompt_id == prompt_id)
    except StopIteration:
        raise UnknownPromptError(f"prompt id {prompt_id!r} not in {cfg.dataset}") from None
    prompt = ctx.prompts[idx]
    _, spd, trace = generate_for_prompt(
        ctx.target,
        ctx.draft,
        prompt,
        gamma=gamma,
        mode=cfg.mode,
        max_new_tokens=cfg.max_new_tokens,
        stop_on_eos=cfg.stop_on_eos,
        seed=cfg.seed,
        prompt_index=idx,
    )
    pieces: list[str] = []
    for block in trace.blocks:
        accepted = block.emitted[: min(block.accepted, len(block.emitted))]
        if accepted:
            pieces.append("[" + ctx.tokenizer.decode(accepted, eos_marker="<eos>") + "]")
        tail = block.emitted[len(accepted) :]
        if tail:
            char = ctx.tokenizer.decode(tail, eos_marker="<eos>")
            pieces.append(f"({char})" if block.correction_kind == "bonus" else "{" + char + "}")
    tau = block_efficiency(trace)
    lines = [
        f"prompt {prompt_id} (template={cfg.template}, gamma={gamma}, mode={cfg.mode}, seed={cfg.seed})",
        "prompt text: " + ctx.tokenizer.decode(prompt.text),
        "output: " + "".join(pieces),
        "legend: [draft accepted] {target correction} (target bonus)",
        f"tokens={len(spd)} target_calls={trace.target_calls} tau={tau:.4f}",
    ]
    return "\n".join(lines)
