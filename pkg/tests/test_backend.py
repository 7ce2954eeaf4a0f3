from __future__ import annotations

import json
import sys

import httpx
import numpy as np
import pytest
from conftest import make_chain, random_chain

from aoe_evolve.backend import (
    BackendError,
    ExecutionLimits,
    GenerationBackend,
    HillDomain,
    KnowledgeExcerpt,
    MockBackend,
    MutationScope,
    TemplateError,
)
from aoe_evolve.backend.remote import RemoteBackend, RemoteError, parse_objective, strip_fences
from aoe_evolve.backend.templates import TEMPLATE_IDS, load_template, placeholders, render
from aoe_evolve.chain import Phase, path_signature, serialize_chain, split_by_phase
from aoe_evolve.fitness import Status, TaskInstance

EX = KnowledgeExcerpt("Assignment model", "match agents to tasks", "x_ij in {0,1}")
INST = TaskInstance("NL4OPT-0001", "NL4OPT", "maximize profit", 250.0)


# -- mock ------------------------------------------------------------------


def test_mock_satisfies_protocol():
    assert isinstance(MockBackend(), GenerationBackend)


def test_mock_generation_shape():
    be = MockBackend()
    plain = be.extract_chain(be.generate_individual("ctx", seed=3))
    kb = be.extract_chain(be.generate_individual("ctx", [EX], seed=3))
    assert len(plain) == 6 and len(kb) == 7
    assert [len(p) for p in split_by_phase(kb)] == [2, 3, 2]
    with pytest.raises(BackendError):
        be.generate_individual("   ")


def test_extract_synthesize_identity_on_random_chains():
    be = MockBackend()
    rng = np.random.default_rng(21)
    for _ in range(100):
        c = random_chain(rng)
        assert be.extract_chain(be.synthesize_artifact(c)) == c


def test_execute_trace_signature_fidelity():
    be = MockBackend(oracle=lambda s, i: True)
    rng = np.random.default_rng(22)
    for _ in range(100):
        c = random_chain(rng)
        trace = be.execute(be.synthesize_artifact(c), INST, ExecutionLimits())
        assert path_signature(trace.chain) == path_signature(c)
        assert len(trace.transcript) == len(c)


def test_synthesize_rejects_invalid_chain():
    c = make_chain()
    with pytest.raises(BackendError):
        MockBackend().synthesize_artifact(type(c)(c.edges[:-1]))


def test_mock_phase_mutation_preserves_other_phases():
    be = MockBackend()
    art = be.generate_individual("ctx", seed=1)
    before = split_by_phase(be.extract_chain(art))
    for phase in Phase:
        for seed in range(20):
            after = split_by_phase(be.extract_chain(be.mutate_artifact(art, MutationScope(phase), seed=seed)))
            for p, a, b in zip(Phase, before, after):
                if p is not phase:
                    assert a == b


def test_mock_guided_mutation_not_worse_on_average():
    be = MockBackend()
    dom = be.domain
    art = be.generate_individual("ctx", seed=0)

    def util(a):
        return dom.path_utility(path_signature(be.extract_chain(a)))

    plain = np.mean([util(be.mutate_artifact(art, MutationScope(None), seed=s)) for s in range(200)])
    guided = np.mean([util(be.mutate_artifact(art, MutationScope(None), [EX], seed=s)) for s in range(200)])
    assert guided > plain


def test_judge_examples_and_symmetry():
    be = MockBackend()
    assert be.judge_equivalence("Ques  Loaded", "ques loaded")
    assert not be.judge_equivalence("Ques Loaded", "Question Loaded")
    for a, b in [("A b", "a B"), ("x", "y")]:
        assert be.judge_equivalence(a, b) == be.judge_equivalence(b, a)


def test_execute_perturbation_and_timeout():
    exact = MockBackend(oracle=lambda s, i: True)
    art = exact.generate_individual("ctx")
    assert exact.execute(art, INST, ExecutionLimits()).objective == 250.0
    off = MockBackend(oracle=lambda s, i: True, perturbation=2e-3)
    assert off.execute(art, INST, ExecutionLimits()).objective == pytest.approx(250.5)
    slow = MockBackend(oracle=lambda s, i: True, runtime=lambda s, i: 10.0)
    assert slow.execute(art, INST, ExecutionLimits(timeout_s=1)).status is Status.RUN_FAILED
    assert exact.execute("not json", INST, ExecutionLimits()).status is Status.RUN_FAILED
    silent = MockBackend(oracle=lambda s, i: None)
    assert silent.execute(art, INST, ExecutionLimits()).status is Status.NO_NUMERIC


def test_hill_domain_enumeration():
    dom = HillDomain()
    assert len(dom.all_paths) == 54
    c = dom.chain_for((2, 1, 0), kb=True)
    assert dom.decode(c) == ([2, 1, 0], True)
    lo, hi = dom.utility_range
    assert lo < hi
    assert HillDomain(utility_seed=1).utility_range != (lo, hi)


# -- templates ---------------------------------------------------------------


def test_all_templates_load_and_declare_placeholders():
    for tid in TEMPLATE_IDS:
        assert placeholders(load_template(tid))


def test_render_missing_placeholder():
    with pytest.raises(TemplateError, match="source_code"):
        render("mutate_direct", mutation_scope="x")
    with pytest.raises(TemplateError):
        load_template("nope")


def test_render_leaves_json_braces():
    out = render("state_judge", phase_name="P", state_a="a", state_b="b", kinds_a="k", kinds_b="k")
    assert '"equivalent"' in out


# -- remote --------------------------------------------------------------------


def completion(text, status=200):
    return httpx.Response(status, json={"choices": [{"message": {"content": text}}]})


def remote(handler, **kw):
    sleeps = []
    be = RemoteBackend(
        endpoint="http://llm.test/v1/chat/completions",
        model="m",
        client=httpx.Client(transport=httpx.MockTransport(handler)),
        sleep=sleeps.append,
        **kw,
    )
    return be, sleeps


def test_remote_retries_with_backoff_then_succeeds():
    calls = []

    def handler(req):
        calls.append(json.loads(req.content))
        return completion("```python\nprint(1)\n```") if len(calls) == 3 else httpx.Response(503)

    be, sleeps = remote(handler)
    assert be.generate_individual("ctx") == "print(1)"
    assert sleeps == [1.0, 2.0]
    assert calls[0]["model"] == "m" and calls[0]["messages"][0]["role"] == "user"


def test_remote_gives_up_after_five_retries():
    be, sleeps = remote(lambda req: httpx.Response(429), backoff_cap=4.0)
    with pytest.raises(RemoteError) as exc:
        be.generate_individual("ctx")
    assert exc.value.attempts == 6 and exc.value.status == 429
    assert sleeps == [1.0, 2.0, 4.0, 4.0, 4.0]


def test_remote_does_not_retry_client_errors():
    be, sleeps = remote(lambda req: httpx.Response(401))
    with pytest.raises(RemoteError):
        be.generate_individual("ctx")
    assert sleeps == []


def test_remote_transport_errors_retry():
    n = []

    def handler(req):
        n.append(1)
        if len(n) == 1:
            raise httpx.ConnectError("refused")
        return completion("print(2)")

    be, sleeps = remote(handler)
    assert be.generate_individual("ctx") == "print(2)" and sleeps == [1.0]


def test_transcript_record_and_replay(tmp_path):
    log = tmp_path / "t.jsonl"
    chain_json = serialize_chain(make_chain())
    be, _ = remote(lambda req: completion(f"```json\n{chain_json}\n```"), transcript_path=log)
    c = be.extract_chain("print('agent')")
    recs = [json.loads(x) for x in log.read_text().splitlines()]
    assert len(recs) == 1 and recs[0]["capability"] == "extract_chain"

    def offline(req):
        raise AssertionError("network used during replay")

    replay, _ = remote(offline, replay_path=log)
    assert replay.extract_chain("print('agent')") == c
    with pytest.raises(RemoteError, match="no recorded"):
        replay.extract_chain("print('other')")


def test_extract_repairs_once():
    good = serialize_chain(make_chain())
    answers = iter(["[]", good])
    prompts = []

    def handler(req):
        prompts.append(json.loads(req.content)["messages"][0]["content"])
        return completion(next(answers))

    be, _ = remote(handler)
    assert be.extract_chain("code") == make_chain()
    assert "rejected" in prompts[1]
    # cached by digest: no further calls
    be.extract_chain("code")
    assert len(prompts) == 2


def test_extract_fails_after_repair():
    be, _ = remote(lambda req: completion("[]"))
    with pytest.raises(BackendError, match="after repair"):
        be.extract_chain("code")


def test_judge_parses_json_and_fallback():
    be, _ = remote(lambda req: completion('{"equivalent": true, "reason": "same"}'))
    assert be.judge_equivalence("a", "b", {"phase": 1})
    be, _ = remote(lambda req: completion("false"))
    assert not be.judge_equivalence("a", "b")
    be, _ = remote(lambda req: completion("maybe"))
    with pytest.raises(BackendError):
        be.judge_equivalence("a", "b")


@pytest.mark.parametrize(
    "out, value",
    [
        ("Objective: 12.5", 12.5),
        ("objective = -3\nBest objective: 4e2", 400.0),
        ("status infeasible", None),
        ("optimal objective value: .5", 0.5),
    ],
)
def test_parse_objective(out, value):
    assert parse_objective(out) == value


def test_strip_fences():
    assert strip_fences("text\n```py\nx = 1\n```\nmore") == "x = 1"
    assert strip_fences("  plain ") == "plain"


def test_subprocess_execute():
    be, _ = remote(lambda req: completion("[]"))
    art = "import os, sys\nq = sys.stdin.read()\nprint('objective:', 7 if os.environ['AOE_INSTANCE_ID'] else 0)\n"
    trace = be.execute(art, INST, ExecutionLimits(timeout_s=30))
    assert trace.status is Status.SOLVED and trace.objective == 7.0
    assert be.execute("raise SystemExit(3)", INST, ExecutionLimits(timeout_s=30)).status is Status.RUN_FAILED
    assert be.execute("print('done')", INST, ExecutionLimits(timeout_s=30)).status is Status.NO_NUMERIC


def test_subprocess_timeout():
    be, _ = remote(lambda req: completion("[]"), python=sys.executable)
    trace = be.execute("import time\ntime.sleep(5)", INST, ExecutionLimits(timeout_s=0.5))
    assert trace.status is Status.RUN_FAILED and trace.transcript == [{"error": "timeout"}]
