"""Chat-completions adapter with retries, transcripts and offline replay."""

from __future__ import annotations

import hashlib
import json
import logging
import os
import re
import subprocess
import sys
import tempfile
import threading
import time
from pathlib import Path
from typing import Callable, Sequence

import httpx

from ..chain import (
    DEFAULT_BOUNDARIES,
    AoeChain,
    ChainParseError,
    ChainValidationError,
    PhaseBoundaries,
    parse_chain,
    serialize_chain,
)
from ..fitness import Status, TaskInstance
from ..merging import MergeGrouping, StateCandidate
from .base import (
    BackendError,
    BackendRequest,
    ExecutionLimits,
    ExecutionTrace,
    KnowledgeExcerpt,
    MutationScope,
    artifact_digest,
)
from .templates import render

log = logging.getLogger(__name__)

DEFAULT_TOOL_DOC = """\
query_llm(messages, model_name) -> str            unified language-model access
load_dataset(path) -> list[dict]                  the only way to read instances
save_generated_code(code, prefix) -> path         persist every candidate program
extract_and_execute_python_code(text) -> (ok, output_or_traceback)
extract_best_objective(output) -> float | None    None on infeasible or unparsable
eval_model_result(ok, result, ground_truth) -> dict  run-pass / solve-correct signals
log_llm_chat(messages, response) -> None          prompt/response trajectory log
"""

_RETRYABLE_STATUS = {408, 409, 425, 429, 500, 502, 503, 504}


class RemoteError(BackendError):
    def __init__(self, message: str, *, status: int | None = None, attempts: int = 0):
        self.status = status
        self.attempts = attempts
        super().__init__(message)


def strip_fences(text: str) -> str:
    m = re.search(r"```[A-Za-z0-9_+-]*\s*\n(.*?)```", text, flags=re.S)
    return (m.group(1) if m else text).strip()


_OBJ_RE = re.compile(
    r"(?i)(?:best|optimal|final)?\s*objective(?:\s*value)?\s*[:=]\s*([-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?)"
)


def parse_objective(output: str) -> float | None:
    """Last ``objective: <number>`` in solver output, or None."""
    hits = _OBJ_RE.findall(output)
    if not hits:
        return None
    try:
        return float(hits[-1])
    except ValueError:
        return None


def _request_hash(model: str, request: BackendRequest, prompt: str) -> str:
    blob = json.dumps([model, request.capability, request.template_id, prompt], ensure_ascii=False)
    return hashlib.sha256(blob.encode("utf-8")).hexdigest()


class RemoteBackend:
    def __init__(
        self,
        *,
        endpoint: str,
        model: str,
        api_key_env: str = "LLM_API_KEY",
        temperature: float = 1.0,
        max_tokens: int = 8192,
        timeout_s: float = 120.0,
        max_retries: int = 5,
        backoff_base: float = 1.0,
        backoff_cap: float = 60.0,
        transcript_path: str | Path | None = None,
        replay_path: str | Path | None = None,
        tool_doc: str = DEFAULT_TOOL_DOC,
        task_context: str = "",
        boundaries: PhaseBoundaries = DEFAULT_BOUNDARIES,
        client: httpx.Client | None = None,
        sleep: Callable[[float], None] = time.sleep,
        python: str = sys.executable,
    ):
        self.endpoint = endpoint
        self.model = model
        self.api_key_env = api_key_env
        self.temperature = temperature
        self.max_tokens = max_tokens
        self.timeout_s = timeout_s
        self.max_retries = max_retries
        self.backoff_base = backoff_base
        self.backoff_cap = backoff_cap
        self.tool_doc = tool_doc
        self.task_context = task_context
        self.boundaries = boundaries
        self.python = python
        self._sleep = sleep
        self._client = client
        self._lock = threading.Lock()
        self._chain_cache: dict[str, AoeChain] = {}
        self.transcript_path = Path(transcript_path) if transcript_path else None
        self._replay: dict[str, str] | None = None
        if replay_path is not None:
            self._replay = {}
            with open(replay_path, encoding="utf-8") as fh:
                for line in fh:
                    if line.strip():
                        rec = json.loads(line)
                        self._replay[rec["request_hash"]] = rec["response"]

    # -- transport ---------------------------------------------------------
    @property
    def client(self) -> httpx.Client:
        if self._client is None:
            self._client = httpx.Client(timeout=self.timeout_s)
        return self._client

    def _post(self, prompt: str) -> str:
        key = os.environ.get(self.api_key_env, "")
        headers = {"Authorization": f"Bearer {key}"} if key else {}
        body = {
            "model": self.model,
            "messages": [{"role": "user", "content": prompt}],
            "temperature": self.temperature,
            "max_tokens": self.max_tokens,
        }
        resp = self.client.post(self.endpoint, json=body, headers=headers, timeout=self.timeout_s)
        if resp.status_code != 200:
            raise RemoteError(f"HTTP {resp.status_code}: {resp.text[:200]}", status=resp.status_code)
        try:
            content = resp.json()["choices"][0]["message"]["content"]
        except (ValueError, KeyError, IndexError, TypeError):
            raise RemoteError("malformed completion payload", status=resp.status_code) from None
        if not isinstance(content, str) or not content.strip():
            raise RemoteError("empty completion", status=resp.status_code)
        return content

    def chat(self, request: BackendRequest, prompt: str) -> str:
        rhash = _request_hash(self.model, request, prompt)
        if self._replay is not None:
            if rhash not in self._replay:
                raise RemoteError(f"no recorded response for {request.capability}/{request.template_id}")
            return self._replay[rhash]
        attempt = 0
        while True:
            try:
                text = self._post(prompt)
                break
            except (RemoteError, httpx.TransportError) as exc:
                status = getattr(exc, "status", None)
                retryable = status is None or status in _RETRYABLE_STATUS
                if not retryable or attempt >= self.max_retries:
                    raise RemoteError(
                        f"{request.capability} failed after {attempt + 1} attempt(s): {exc}",
                        status=status,
                        attempts=attempt + 1,
                    ) from exc
                delay = min(self.backoff_cap, self.backoff_base * 2**attempt)
                log.warning("%s attempt %d failed (%s); retrying in %.1fs", request.capability, attempt + 1, exc, delay)
                self._sleep(delay)
                attempt += 1
        self._record(rhash, request, prompt, text)
        return text

    def _record(self, rhash: str, request: BackendRequest, prompt: str, response: str) -> None:
        if self.transcript_path is None:
            return
        rec = {
            "request_hash": rhash,
            "capability": request.capability,
            "template_id": request.template_id,
            "model": self.model,
            "prompt": prompt,
            "response": response,
        }
        with self._lock, open(self.transcript_path, "a", encoding="utf-8") as fh:
            fh.write(json.dumps(rec, ensure_ascii=False) + "\n")

    # -- capabilities ------------------------------------------------------
    def generate_individual(
        self, task_context: str, excerpts: Sequence[KnowledgeExcerpt] | None = None, *, seed: int = 0
    ) -> str:
        if not task_context.strip():
            raise BackendError("empty task context")
        if excerpts:
            tid = "init_kb"
            values = {"retrieved_knowledge": "\n\n".join(x.render() for x in excerpts)}
        else:
            tid, values = "init_plain", {}
        prompt = render(tid, task_context=task_context, tool_doc=self.tool_doc, **values)
        req = BackendRequest("generate", tid, {"task_context": task_context, "seed": seed})
        code = strip_fences(self.chat(req, prompt))
        if not code:
            raise BackendError("generation returned no code")
        return code

    def extract_chain(self, artifact: str) -> AoeChain:
        digest = artifact_digest(artifact)
        with self._lock:
            if digest in self._chain_cache:
                return self._chain_cache[digest]
        labels = {f"boundary_{i}": lab for i, lab in enumerate(self.boundaries.labels)}
        prompt = render("code_to_chain", tool_doc=self.tool_doc, source_code=artifact, **labels)
        req = BackendRequest("extract_chain", "code_to_chain", {"artifact_digest": digest})
        error = None
        for attempt in range(2):
            text = self.chat(req, prompt)
            try:
                chain = parse_chain(strip_fences(text), validate=True, boundaries=self.boundaries)
                break
            except (ChainParseError, ChainValidationError) as exc:
                error = exc
                prompt = f"{prompt}\n\nYour previous answer was rejected: {exc}\nReturn a corrected JSON array."
        else:
            raise BackendError(f"chain extraction failed after repair: {error}")
        with self._lock:
            self._chain_cache[digest] = chain
        return chain

    def synthesize_artifact(self, chain: AoeChain, *, seed: int = 0) -> str:
        prompt = render("chain_to_code", aoe_chain_json=serialize_chain(chain))
        req = BackendRequest("synthesize", "chain_to_code", {"edges": len(chain), "seed": seed})
        code = strip_fences(self.chat(req, prompt))
        if not code:
            raise BackendError("synthesis returned no code")
        return code

    def mutate_artifact(
        self,
        artifact: str,
        scope: MutationScope,
        excerpts: Sequence[KnowledgeExcerpt] | None = None,
        *,
        seed: int = 0,
    ) -> str:
        if excerpts:
            tid = "mutate_kb"
            values = {"retrieved_knowledge": "\n\n".join(x.render() for x in excerpts)}
        else:
            tid, values = "mutate_direct", {}
        prompt = render(tid, source_code=artifact, mutation_scope=scope.describe(), **values)
        req = BackendRequest("mutate", tid, {"artifact_digest": artifact_digest(artifact), "seed": seed})
        code = strip_fences(self.chat(req, prompt))
        if not code:
            raise BackendError("mutation returned no code")
        return code

    def judge_equivalence(self, state_a: str, state_b: str, context: dict | None = None) -> bool:
        ctx = context or {}
        phase = ctx.get("phase")
        from ..chain import Phase

        prompt = render(
            "state_judge",
            phase_name=Phase(phase).title if phase else "unknown",
            state_a=state_a,
            state_b=state_b,
            kinds_a=", ".join(ctx.get("kinds_a", [])) or "unknown",
            kinds_b=", ".join(ctx.get("kinds_b", [])) or "unknown",
        )
        req = BackendRequest("judge", "state_judge", {"pair": sorted([state_a, state_b])})
        text = strip_fences(self.chat(req, prompt))
        try:
            return bool(json.loads(text)["equivalent"])
        except (ValueError, KeyError, TypeError):
            low = text.lower()
            if "true" in low and "false" not in low:
                return True
            if "false" in low and "true" not in low:
                return False
            raise BackendError(f"unreadable judge verdict: {text[:80]!r}") from None

    def merge_states(self, candidates: Sequence[StateCandidate]) -> MergeGrouping:
        """Ask for a whole-phase grouping in the interchange format."""
        records = [
            {
                "node_id": c.node_id,
                "state_text": c.state_text,
                "phase": c.phase.title,
                "incident_types": sorted(k.surface for k in c.incident_kinds),
            }
            for c in candidates
        ]
        prompt = render("state_merge", state_records=json.dumps(records, ensure_ascii=False, indent=2))
        req = BackendRequest("judge", "state_merge", {"n": len(records)})
        try:
            return MergeGrouping.from_json(strip_fences(self.chat(req, prompt)))
        except (ValueError, KeyError, TypeError) as exc:
            raise BackendError(f"unreadable grouping: {exc}") from None

    def execute(self, artifact: str, instance: TaskInstance, limits: ExecutionLimits) -> ExecutionTrace:
        try:
            chain = self.extract_chain(artifact)
        except BackendError:
            chain = None
        with tempfile.TemporaryDirectory(prefix="aoe-exec-") as tmp:
            script = Path(tmp) / "agent.py"
            script.write_text(artifact, encoding="utf-8")
            env = dict(os.environ, AOE_INSTANCE_ID=instance.id, AOE_QUESTION=instance.question)
            try:
                proc = subprocess.run(
                    [self.python, str(script)],
                    input=instance.question,
                    capture_output=True,
                    text=True,
                    timeout=limits.timeout_s,
                    cwd=tmp,
                    env=env,
                )
            except subprocess.TimeoutExpired:
                return ExecutionTrace(Status.RUN_FAILED, None, chain, [{"error": "timeout"}])
        out = proc.stdout[: limits.max_output_chars]
        transcript = [{"returncode": proc.returncode, "stdout": out, "stderr": proc.stderr[: limits.max_output_chars]}]
        if proc.returncode != 0:
            return ExecutionTrace(Status.RUN_FAILED, None, chain, transcript)
        value = parse_objective(out)
        if value is None:
            return ExecutionTrace(Status.NO_NUMERIC, None, chain, transcript)
        return ExecutionTrace(Status.SOLVED, value, chain, transcript)
