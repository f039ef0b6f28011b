from __future__ import annotations

import hashlib
import json

import pytest

from macr.backend import StubTransport
from macr.errors import DebateError, EmptyOutputError, ValidationError
from macr.prompts import PromptSet, parse_template
from macr.reasoner import generate_inferences, parse_evidence_level, run_debate
from macr.stores import inference_record

from conftest import DATA, check_golden, make_stub_backend, stub_config

ACES = {"analyst": "A", "critic": "C", "empiricist": "E", "synthesizer": "S"}


def test_stub_pass_through(fixture12):
    backend = make_stub_backend(StubTransport(by_role=ACES))
    inf = run_debate(fixture12.get("t01"), 0, stub_config(), backend)
    t = inf.source
    assert inf.text == "S"
    assert (t.analyst_output, t.critic_output, t.empiricist_output, t.synthesis) == ("A", "C", "E", "S")
    assert t.rounds == 3 and inf.evidence_level == "Unspecified"


def test_round_two_empiricist_failure_is_named(fixture12):
    stub = StubTransport(by_role={**ACES, "empiricist": ValidationError("x", "boom")})
    with pytest.raises(DebateError) as err:
        run_debate(fixture12.get("t01"), 0, stub_config(), make_stub_backend(stub))
    assert err.value.round_no == 2 and err.value.role == "empiricist"
    assert "round 2" in str(err.value) and "empiricist" in str(err.value)


def test_retry_exhaustion_wrapped_as_debate_error(fixture12):
    stub = StubTransport(by_role=ACES, failures={"synthesizer": 5})
    with pytest.raises(DebateError) as err:
        run_debate(fixture12.get("t01"), 0, stub_config(), make_stub_backend(stub))
    assert err.value.round_no == 3 and err.value.role == "synthesizer"


def test_empty_synthesis(fixture12):
    stub = StubTransport(by_role={**ACES, "synthesizer": ""})
    with pytest.raises(EmptyOutputError, match="round 3"):
        run_debate(fixture12.get("t01"), 0, stub_config(), make_stub_backend(stub))


def test_round_ordering_feeds_outputs_forward(fixture12):
    seen = {}

    def record(role, reply):
        def fn(req):
            seen[role] = req.user_prompt
            return reply
        return fn

    stub = StubTransport(by_role={r: record(r, v) for r, v in {
        "analyst": "ANALYSIS-1", "critic": "CRITIQUE-2", "empiricist": "EVIDENCE-3", "synthesizer": "FINAL-4",
    }.items()})
    run_debate(fixture12.get("t02"), 0, stub_config(), make_stub_backend(stub))
    assert "ANALYSIS-1" in seen["critic"] and "ANALYSIS-1" in seen["empiricist"]
    assert "CRITIQUE-2" not in seen["empiricist"] and "EVIDENCE-3" not in seen["critic"]
    for text in ("ANALYSIS-1", "CRITIQUE-2", "EVIDENCE-3"):
        assert text in seen["synthesizer"]


def test_golden_transcript(fixture12):
    def run():
        inf = generate_inferences(fixture12.get("t05"), 2, stub_config(), make_stub_backend())[1]
        rec = inference_record(inf)
        rec["embedding"] = hashlib.sha256(json.dumps(rec["embedding"]).encode()).hexdigest()
        return json.dumps(rec, indent=2, ensure_ascii=False) + "\n"

    first = run()
    assert run() == first
    check_golden(DATA / "golden" / "inference_t05_g1.json", first)


def test_n_one_equals_run_debate(fixture12):
    tree, cfg = fixture12.get("t03"), stub_config()
    (only,) = generate_inferences(tree, 1, cfg, make_stub_backend())
    direct = run_debate(tree, 0, cfg, make_stub_backend())
    assert only.text == direct.text and only.source == direct.source
    assert only.embedding is not None


def test_n_ten_distinct(fixture12):
    infs = generate_inferences(fixture12.get("t04"), 10, stub_config(), make_stub_backend())
    assert [i.generation_index for i in infs] == list(range(10))
    assert len({i.text for i in infs}) == 10
    assert len({i.embedding.values for i in infs}) == 10
    assert len({i.source.nonce for i in infs}) == 10


def test_identical_synthesis_not_deduplicated(fixture12):
    stub = StubTransport(by_role={"synthesizer": "same conclusion. Evidence level: High"})
    infs = generate_inferences(fixture12.get("t04"), 3, stub_config(), make_stub_backend(stub))
    assert len(infs) == 3
    assert {i.text for i in infs} == {"same conclusion. Evidence level: High"}
    assert all(i.evidence_level == "High" for i in infs)


def test_fail_fast_and_skip(fixture12):
    cfg = stub_config()
    stub = StubTransport(by_role={"synthesizer": ValidationError("x", "down")})
    with pytest.raises(DebateError) as err:
        generate_inferences(fixture12.get("t01"), 3, cfg, make_stub_backend(stub))
    assert err.value.generation_index == 0

    failures = []
    out = generate_inferences(fixture12.get("t01"), 3, cfg, make_stub_backend(stub), on_error="skip", failures=failures)
    assert out == [] and [i for i, _ in failures] == [0, 1, 2]


def test_analyst_only_ablation_runs_one_round(fixture12):
    stub = StubTransport()
    infs = generate_inferences(fixture12.get("t06"), 4, stub_config(ablation="analyst_only"), make_stub_backend(stub))
    assert all(i.source.rounds == 1 and i.source.critic_output == "" for i in infs)
    assert set(stub.calls_by_role) == {"analyst"}


@pytest.mark.parametrize("text,level", [
    ("Evidence level: High", "High"),
    ("evidence strength = medium overall", "Medium"),
    ("**Evidence level:** low", "Low"),
    ("Support is Medium at best", "Medium"),
    ("no rating given", "Unspecified"),
])
def test_evidence_level_parsing(text, level):
    assert parse_evidence_level(text) == level


def test_prompts_cover_appraisal_dimensions():
    prompts = PromptSet.load()
    for role in ("analyst", "critic", "empiricist", "synthesizer"):
        text = (prompts[role].system + prompts[role].user).lower()
        for word in ("cognitive", "emotional", "behavioral"):
            assert word in text, (role, word)


def test_missing_placeholder_is_startup_error(tmp_path):
    with pytest.raises(ValidationError, match="missing placeholders"):
        parse_template("critic", "[system]\nx\n[user]\n{tree} {nonce}\n")
    (tmp_path / "analyst.txt").write_text("[system]\nx\n[user]\nno slots here\n")
    with pytest.raises(ValidationError, match="template:analyst"):
        PromptSet.load(tmp_path)


def test_prompt_override_changes_version(tmp_path):
    (tmp_path / "analyst.txt").write_text("[system]\nbe brief\n[user]\n{tree}\n{nonce}\n")
    assert PromptSet.load(tmp_path).version != PromptSet.load().version
