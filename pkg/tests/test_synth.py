import json
import math
import threading
import time
from http.server import BaseHTTPRequestHandler, ThreadingHTTPServer

import numpy as np
import pytest

from anchorkit.errors import ConfigError, ContractError, GenerationFormatError, TransportError
from anchorkit.synth import (
    CONTENT_WORDS,
    DISTRACTOR_WORDS,
    HttpBackendConfig,
    HttpChatBackend,
    MockChatBackend,
    PromptPlaceholders,
    TaskSpec,
    TrainingTriplet,
    augment_pairs,
    augment_retrieval_pair,
    brainstorm_tasks,
    extract_json_object,
    generate_triplet,
    level_tags,
    parse_generation,
    render_prompt,
    sample_placeholders,
    synthesize_dataset,
    validate_record,
)

TASK = TaskSpec("short-long", "Retrieve articles answering questions about river ecology.")
PH = PromptPlaceholders(
    query_type="common",
    query_length="5 to 15 words",
    clarity="clear",
    num_words=100,
    difficulty="college",
)


def make_reply(tags=("high", "medium", "medium", "low"), texts=None, query="q words", positive="p words"):
    texts = texts if texts is not None else [f"negative text {i}" for i in range(len(tags))]
    return json.dumps(
        {
            "user_query": query,
            "positive_document": positive,
            "hard_negative_document": [
                {"similarity_level": t, "text": x} for t, x in zip(tags, texts)
            ],
        }
    )


class ScriptedBackend:
    """Returns queued replies in order; repeats the last one when exhausted."""

    max_parallel = 1

    def __init__(self, replies):
        self.replies = list(replies)
        self.calls = 0

    def complete(self, messages, temperature=None):
        self.calls += 1
        reply = self.replies[0] if len(self.replies) == 1 else self.replies.pop(0)
        return reply


def overlap(a: str, b: str) -> int:
    return len(set(a.split()) & set(b.split()))


# -- word banks ------------------------------------------------------------


def test_word_banks_disjoint_and_unique():
    assert len(set(CONTENT_WORDS)) == len(CONTENT_WORDS)
    assert len(set(DISTRACTOR_WORDS)) == len(DISTRACTOR_WORDS)
    assert not set(CONTENT_WORDS) & set(DISTRACTOR_WORDS)


def test_level_tags():
    assert level_tags(4) == ("high", "medium", "medium", "low")
    assert level_tags(2) == ("high", "low")
    with pytest.raises(ConfigError):
        level_tags(0)


# -- templates ---------------------------------------------------------------


def test_render_prompt_contains_num_words():
    text = render_prompt(TASK, PH)
    assert "at least 100 words" in text


def test_render_prompt_has_four_similarity_slots():
    text = render_prompt(TASK, PH)
    assert text.count('"similarity_level"') == 4
    assert "arranged in order of decreasing similarity to the query" in text
    for field in ("{query_type}", "{query_length}", "{clarity}", "{num_words}", "{difficulty}", "{language}"):
        assert field not in text


def test_render_prompt_is_pure():
    assert render_prompt(TASK, PH) == render_prompt(TASK, PH)


def test_placeholder_validation():
    with pytest.raises(ConfigError):
        PromptPlaceholders("rare", "5 to 15 words", "clear", 100, "college")
    with pytest.raises(ConfigError):
        PromptPlaceholders("common", "5 to 15 words", "clear", 99, "college")
    ph = sample_placeholders(np.random.default_rng(0))
    assert ph.num_words in (50, 100, 200, 300, 400, 500)


# -- parsing and validation --------------------------------------------------


def test_parse_generation_happy_path():
    t = parse_generation(make_reply(), TASK)
    assert t.negatives[0] == "negative text 0"
    assert t.source == "synthetic"
    assert t.category == "short-long"
    assert t.task is TASK


def test_parse_tolerates_fences_and_prose():
    raw = "Sure! Here you go:\n```json\n" + make_reply() + "\n```\nHope that helps."
    t = parse_generation(raw, TASK)
    assert len(t.negatives) == 4


def test_parse_wrong_negative_count():
    with pytest.raises(GenerationFormatError) as err:
        parse_generation(make_reply(tags=("high", "medium", "low")), TASK)
    assert err.value.violation == "negative_count"


def test_parse_wrong_level_order():
    with pytest.raises(GenerationFormatError) as err:
        parse_generation(make_reply(tags=("high", "low", "medium", "medium")), TASK)
    assert err.value.violation == "level_order"


def test_parse_empty_text():
    with pytest.raises(GenerationFormatError) as err:
        parse_generation(make_reply(texts=["a", "   ", "c", "d"]), TASK)
    assert err.value.violation == "empty_text"


def test_parse_missing_field():
    record = json.loads(make_reply())
    del record["positive_document"]
    with pytest.raises(GenerationFormatError) as err:
        parse_generation(json.dumps(record), TASK)
    assert err.value.violation == "missing_field"


def test_parse_duplicate_negatives():
    with pytest.raises(GenerationFormatError) as err:
        parse_generation(make_reply(texts=["same", "same", "c", "d"]), TASK)
    assert err.value.violation == "duplicate_negative"


def test_parse_non_json():
    with pytest.raises(GenerationFormatError) as err:
        parse_generation("I could not produce the example.", TASK)
    assert err.value.violation == "unparseable"
    assert err.value.raw.startswith("I could not")


def test_extract_json_object_picks_first_object():
    obj = extract_json_object('noise {"a": 1} trailing {"b": 2}')
    assert obj == {"a": 1}


def test_validate_record_rejects_bad_source():
    record = json.loads(make_reply())
    record["source"] = "scraped"
    with pytest.raises(GenerationFormatError) as err:
        validate_record(record)
    assert err.value.violation == "invalid_source"


# -- mock backend -------------------------------------------------------------


def test_mock_brainstorm_deterministic_and_distinct():
    tasks_a = brainstorm_tasks("short-long", 5, MockChatBackend(seed=1))
    tasks_b = brainstorm_tasks("short-long", 5, MockChatBackend(seed=1))
    assert [t.description for t in tasks_a] == [t.description for t in tasks_b]
    assert len(tasks_a) == 5
    assert len({t.description for t in tasks_a}) == 5
    assert all("\n" not in t.description for t in tasks_a)


def test_brainstorm_unparseable_reply():
    with pytest.raises(GenerationFormatError) as err:
        brainstorm_tasks("sts", 3, ScriptedBackend(["Here are some ideas you may enjoy."]))
    assert err.value.violation == "unparseable"


def test_brainstorm_deduplicates_case_insensitively():
    reply = json.dumps(["Find matching texts.", "find matching texts.", "Other task here."])
    tasks = brainstorm_tasks("sts", 10, ScriptedBackend([reply]))
    assert len(tasks) == 2


def test_mock_equal_seeds_give_identical_replies():
    msg = [{"role": "user", "content": render_prompt(TASK, PH)}]
    assert MockChatBackend(seed=3).complete(msg) == MockChatBackend(seed=3).complete(msg)
    assert MockChatBackend(seed=3).complete(msg) != MockChatBackend(seed=4).complete(msg)


def test_mock_corruption_count_20_words_level4():
    rng = np.random.default_rng(0)
    words = list(CONTENT_WORDS[:20])
    out = MockChatBackend._corrupt(words, 0.90, level=3, num_levels=4, rng=rng)
    assert len(out) == 20
    assert sum(a != b for a, b in zip(words, out)) == math.ceil(0.9 * 20) == 18


def test_mock_corruption_counts_match_rates():
    rng = np.random.default_rng(1)
    words = list(CONTENT_WORDS[:40])
    for level, rate in enumerate((0.15, 0.35, 0.60, 0.90)):
        out = MockChatBackend._corrupt(words, rate, level, 4, np.random.default_rng(level))
        assert sum(a != b for a, b in zip(words, out)) == math.ceil(rate * 40)


def test_generated_triplet_overlap_strictly_decreasing():
    t = generate_triplet(TASK, PH, MockChatBackend(seed=9))
    overlaps = [overlap(t.positive, n) for n in t.negatives]
    assert overlaps[0] > overlaps[1] > overlaps[2] > overlaps[3]


def test_generate_triplet_retries_once_on_validation_failure():
    backend = ScriptedBackend(["not json at all", make_reply()])
    t = generate_triplet(TASK, PH, backend, retry_rng=np.random.default_rng(0))
    assert backend.calls == 2
    assert t.query == "q words"


def test_generate_triplet_gives_up_after_retry():
    backend = ScriptedBackend(["bad", "still bad", make_reply()])
    with pytest.raises(GenerationFormatError):
        generate_triplet(TASK, PH, backend, retry_rng=np.random.default_rng(0))
    assert backend.calls == 2


def test_augment_pair_properties():
    backend = MockChatBackend(seed=5)
    q, p = "river otters habitat", "river otters live along wooded banks and hunt fish"
    t1 = augment_retrieval_pair(q, p, backend)
    t2 = augment_retrieval_pair(q, p, MockChatBackend(seed=5))
    assert t1 == t2
    assert t1.source == "retrieval_augmented"
    assert t1.category == "retrieval"
    assert len(set(t1.negatives)) == 4
    assert all(n != p for n in t1.negatives)
    with pytest.raises(ContractError):
        augment_retrieval_pair("  ", p, backend)


def test_synthesize_dataset_deterministic(mock_corpus_64):
    backend = MockChatBackend(seed=7)
    again, report = synthesize_dataset(backend, n=64, seed=7)
    assert report.accepted == 64
    assert again == mock_corpus_64


def test_synthesize_dataset_category_mix_and_sources(mock_corpus_64):
    cats = {t.category for t in mock_corpus_64}
    assert cats <= {"short-long", "long-short", "long-long", "short-short", "sts"}
    assert len(cats) >= 3
    assert all(t.source == "synthetic" for t in mock_corpus_64)
    assert all(len(t.negatives) == 4 for t in mock_corpus_64)


def test_bounded_parallelism_respected():
    class InstrumentedBackend(MockChatBackend):
        def __init__(self):
            super().__init__(seed=0, max_parallel=3)
            self.lock = threading.Lock()
            self.active = 0
            self.high_water = 0

        def complete(self, messages, temperature=None):
            with self.lock:
                self.active += 1
                self.high_water = max(self.high_water, self.active)
            time.sleep(0.004)
            try:
                return super().complete(messages, temperature)
            finally:
                with self.lock:
                    self.active -= 1

    backend = InstrumentedBackend()
    triplets, report = synthesize_dataset(backend, n=24, seed=1)
    assert report.accepted == 24
    assert backend.high_water <= 3


# -- http backend -------------------------------------------------------------


class _Handler(BaseHTTPRequestHandler):
    server_version = "TestChat/1.0"

    def do_POST(self):
        state = self.server.state
        state["requests"].append(
            {
                "path": self.path,
                "auth": self.headers.get("Authorization"),
                "body": json.loads(self.rfile.read(int(self.headers["Content-Length"]))),
            }
        )
        plan = state["plan"]
        status = plan.pop(0) if plan else 200
        if status != 200:
            self.send_response(status)
            self.end_headers()
            return
        payload = state["payload"]
        body = json.dumps(payload).encode()
        self.send_response(200)
        self.send_header("Content-Type", "application/json")
        self.send_header("Content-Length", str(len(body)))
        self.end_headers()
        self.wfile.write(body)

    def log_message(self, *args):
        pass


@pytest.fixture()
def chat_server():
    server = ThreadingHTTPServer(("127.0.0.1", 0), _Handler)
    server.state = {
        "requests": [],
        "plan": [],
        "payload": {"choices": [{"message": {"content": make_reply()}}]},
    }
    thread = threading.Thread(target=server.serve_forever, daemon=True)
    thread.start()
    yield server
    server.shutdown()


def _backend_for(server, **kwargs):
    defaults = dict(
        base_url=f"http://127.0.0.1:{server.server_address[1]}",
        model="test-model",
        max_retries=3,
        backoff_base=0.001,
        backoff_cap=0.002,
        timeout=5.0,
    )
    defaults.update(kwargs)
    return HttpChatBackend(HttpBackendConfig(**defaults))


def test_http_wire_protocol(chat_server, monkeypatch):
    monkeypatch.setenv("CHAT_API_TOKEN", "sekrit")
    backend = _backend_for(chat_server)
    content = backend.complete([{"role": "user", "content": "hello"}], temperature=0.25)
    assert content == make_reply()
    req = chat_server.state["requests"][0]
    assert req["path"] == "/v1/chat/completions"
    assert req["auth"] == "Bearer sekrit"
    assert req["body"] == {
        "model": "test-model",
        "messages": [{"role": "user", "content": "hello"}],
        "temperature": 0.25,
    }


def test_http_retries_twice_then_succeeds(chat_server):
    chat_server.state["plan"] = [503, 503]
    backend = _backend_for(chat_server)
    t = parse_generation(backend.complete([{"role": "user", "content": "x"}]), TASK)
    assert t.query == "q words"
    assert backend.stats["retries"] == 2
    assert backend.stats["requests"] == 3


def test_http_gives_up_after_max_retries(chat_server):
    chat_server.state["plan"] = [500, 500, 500]
    backend = _backend_for(chat_server, max_retries=2)
    with pytest.raises(TransportError):
        backend.complete([{"role": "user", "content": "x"}])
    assert backend.stats["requests"] == 3


def test_http_unreachable_host():
    backend = HttpChatBackend(
        HttpBackendConfig(base_url="http://127.0.0.1:9", max_retries=0, timeout=0.2)
    )
    with pytest.raises(TransportError):
        backend.complete([{"role": "user", "content": "x"}])


def test_http_malformed_envelope(chat_server):
    chat_server.state["payload"] = {"unexpected": True}
    backend = _backend_for(chat_server)
    with pytest.raises(TransportError, match="envelope"):
        backend.complete([{"role": "user", "content": "x"}])


def test_http_non_retryable_status(chat_server):
    chat_server.state["plan"] = [403]
    backend = _backend_for(chat_server)
    with pytest.raises(TransportError, match="403"):
        backend.complete([{"role": "user", "content": "x"}])
    assert backend.stats["requests"] == 1


# -- misc ---------------------------------------------------------------------


def test_triplet_empty_text_rejected():
    with pytest.raises(GenerationFormatError):
        TrainingTriplet(query="", positive="p", negatives=("a", "b", "c", "d"))


def test_augment_pairs_driver():
    backend = MockChatBackend(seed=2)
    pairs = [(f"query {w}", f"{w} document body words here") for w in ("one", "two", "three")]
    triplets, report = augment_pairs(backend, pairs)
    assert report.accepted == 3
    assert all(t.source == "retrieval_augmented" for t in triplets)
