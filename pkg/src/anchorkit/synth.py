"""Two-stage multi-granularity hard-negative synthesis.

Stage 1 brainstorms embedding tasks per category; stage 2 renders one prompt
per (task, placeholder sample) and asks the chat backend for a JSON object
holding a query, a positive document, and an ordered list of hard negatives
tagged high / medium / medium / low, most-similar first. Replies are parsed
strictly: anything with the wrong negative count, tag order, empty text, or
duplicate negatives is rejected with a typed violation so callers can count
and skip. A seeded mock backend stands in for a real completion API and
plants the descending-similarity structure by corrupting a growing fraction
of the positive's words per level.
"""

from __future__ import annotations

import json
import math
import os
import random
import re
import threading
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, field
from hashlib import sha256
from typing import Iterable, Sequence

import numpy as np
import requests

from .errors import ConfigError, ContractError, GenerationFormatError, TransportError

CATEGORIES = ("short-long", "long-short", "long-long", "short-short", "sts")
RETRIEVAL_CATEGORY = "retrieval"
SOURCES = ("synthetic", "retrieval_augmented")

DEFAULT_CATEGORY_MIX = {
    "short-long": 0.30,
    "long-short": 0.25,
    "sts": 0.25,
    "long-long": 0.10,
    "short-short": 0.10,
}

QUERY_TYPES = ("extremely long-tail", "long-tail", "common")
QUERY_LENGTHS = ("less than 5 words", "5 to 15 words", "at least 10 words")
CLARITIES = ("clear", "understandable with some effort", "ambiguous")
NUM_WORDS_CHOICES = (50, 100, 200, 300, 400, 500)
DIFFICULTIES = ("high school", "college", "PhD")

MOCK_CORRUPTION_RATES = (0.15, 0.35, 0.60, 0.90)

_COUNT_WORDS = ("zero", "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten")


def level_tags(num_levels: int) -> tuple[str, ...]:
    """Canonical similarity tags, most similar first: high, medium..., low."""
    if num_levels < 1:
        raise ConfigError(f"num_levels must be >= 1, got {num_levels}")
    if num_levels == 1:
        return ("high",)
    return ("high",) + ("medium",) * (num_levels - 2) + ("low",)


@dataclass(frozen=True)
class TaskSpec:
    """One brainstormed embedding task: the seed for stage-2 generation."""

    category: str
    description: str

    def __post_init__(self):
        if self.category not in CATEGORIES:
            raise ConfigError(f"category must be one of {CATEGORIES}, got {self.category!r}")
        if not self.description.strip() or "\n" in self.description:
            raise ConfigError("task description must be a non-empty single line")


@dataclass(frozen=True)
class PromptPlaceholders:
    query_type: str
    query_length: str
    clarity: str
    num_words: int
    difficulty: str
    language: str = "English"

    def __post_init__(self):
        checks = (
            ("query_type", self.query_type, QUERY_TYPES),
            ("query_length", self.query_length, QUERY_LENGTHS),
            ("clarity", self.clarity, CLARITIES),
            ("num_words", self.num_words, NUM_WORDS_CHOICES),
            ("difficulty", self.difficulty, DIFFICULTIES),
        )
        for name, value, allowed in checks:
            if value not in allowed:
                raise ConfigError(f"{name} must be one of {allowed}, got {value!r}")
        if not self.language.strip():
            raise ConfigError("language must be non-empty")


def sample_placeholders(rng: np.random.Generator, language: str = "English") -> PromptPlaceholders:
    """Uniform draw from each enumerated placeholder set."""
    return PromptPlaceholders(
        query_type=QUERY_TYPES[rng.integers(len(QUERY_TYPES))],
        query_length=QUERY_LENGTHS[rng.integers(len(QUERY_LENGTHS))],
        clarity=CLARITIES[rng.integers(len(CLARITIES))],
        num_words=NUM_WORDS_CHOICES[rng.integers(len(NUM_WORDS_CHOICES))],
        difficulty=DIFFICULTIES[rng.integers(len(DIFFICULTIES))],
        language=language,
    )


@dataclass(frozen=True)
class TrainingTriplet:
    """One (query, positive, ordered hard negatives) record.

    negatives[0] is the hardest (most query-similar) level k=1; the last
    entry is the easiest. category names the task family the record came
    from ("retrieval" for augmented public pairs).
    """

    query: str
    positive: str
    negatives: tuple[str, ...]
    source: str = "synthetic"
    category: str = "short-long"
    task: TaskSpec | None = None

    def __post_init__(self):
        if self.source not in SOURCES:
            raise GenerationFormatError("invalid_source", f"unknown source {self.source!r}")
        if self.category not in CATEGORIES and self.category != RETRIEVAL_CATEGORY:
            raise GenerationFormatError("invalid_category", f"unknown category {self.category!r}")
        for name, text in (("user_query", self.query), ("positive_document", self.positive)):
            if not text.strip():
                raise GenerationFormatError("empty_text", f"{name} is empty")
        for i, neg in enumerate(self.negatives):
            if not neg.strip():
                raise GenerationFormatError("empty_text", f"hard_negative_document[{i}] is empty")


# --------------------------------------------------------------------------
# Prompt templates
# --------------------------------------------------------------------------

_STAGE1_FLAVORS = {
    "short-long": (
        "text retrieval tasks where a short query matches long documents",
        "- Retrieve relevant documents for a short keyword web search query that asks for weather information.\n"
        "- Search for documents that answers a FAQ-style query on children's nutrition.",
        "retrieval task",
    ),
    "long-short": (
        "text matching tasks where a long text matches short answers or titles",
        "- Given a paragraph describing the symptoms of a device failure, find the short error code it corresponds to.\n"
        "- Match a full product review to the short headline that best summarizes it.",
        "matching task",
    ),
    "long-long": (
        "text matching tasks where long texts match other long texts",
        "- Given a news article, retrieve other articles covering the same event from a different outlet.\n"
        "- Match a legal brief to prior case summaries that argue a related point.",
        "matching task",
    ),
    "short-short": (
        "text matching tasks where short texts match other short texts",
        "- Match a user's search phrase to an equivalent previously asked question.\n"
        "- Given a product name, find alternative names the same product is listed under.",
        "matching task",
    ),
    "sts": (
        "semantic textual similarity tasks where two sentences are compared for meaning",
        "- Judge whether two sentences describing daily activities express the same meaning.\n"
        "- Compare a pair of news headlines and decide how semantically similar they are.",
        "similarity task",
    ),
}


def stage1_prompt(category: str) -> str:
    if category not in CATEGORIES:
        raise ConfigError(f"category must be one of {CATEGORIES}, got {category!r}")
    topic, examples, noun = _STAGE1_FLAVORS[category]
    return (
        f"Brainstorm a list of potentially useful {topic}.\n"
        "\n"
        "Here are a few examples for your reference:\n"
        f"{examples}\n"
        "\n"
        "Please adhere to the following guidelines:\n"
        "- Specify what the query is, and what the desired documents are.\n"
        f"- Each {noun} should cover a wide range of queries, and should not be too specific.\n"
        "\n"
        "Your output must always be a python list of strings only, with about 20 elements, "
        f"and each element corresponds to a distinct {noun} in one sentence. "
        "Do not explain yourself or output anything else. Be creative!"
    )


def _negative_format_block(num_levels: int) -> str:
    tags = level_tags(num_levels)
    slots = []
    for i, tag in enumerate(tags):
        if tag == "medium" and num_levels == 4:
            label = "MEDIUM_HIGH" if i == 1 else "MEDIUM_LOW"
        else:
            label = tag.upper()
        slots.append(
            '    {\n'
            f'      "similarity_level": "{tag}",\n'
            f'      "text": "{label}_SIMILARITY_NEGATIVE_EXAMPLE_TEXT"\n'
            '    }'
        )
    return '  "hard_negative_document": [\n' + ",\n".join(slots) + "\n  ]"


def _spelled(n: int) -> str:
    return _COUNT_WORDS[n] if 0 <= n < len(_COUNT_WORDS) else str(n)


def render_prompt(task: TaskSpec, ph: PromptPlaceholders, num_levels: int = 4) -> str:
    """Stage-2 generation prompt with all placeholders substituted."""
    noun = "text retrieval example" if task.category == "short-long" else "text matching example"
    return (
        f"You have been assigned a {_STAGE1_FLAVORS[task.category][2]}: {task.description}\n"
        "\n"
        f"Your mission is to write one {noun} for this task in the following JSON format. "
        "The JSON object must contain the following keys:\n"
        '- "user_query": a string, a random user search query specified by the task.\n'
        '- "positive_document": a string, a relevant document for the user query.\n'
        '- "hard_negative_document": a list of strings, hard negative documents that only appears '
        "relevant to the query.\n"
        "\n"
        "The output should be formatted as a JSON object with a field indicating the relative "
        "similarity level of hard negative examples. Use the following format as a guide:\n"
        "\n"
        "{\n"
        '  "user_query": "QUERY_TEXT",\n'
        '  "positive_document": "POSITIVE_EXAMPLE_TEXT",\n'
        f"{_negative_format_block(num_levels)}\n"
        "}\n"
        "\n"
        "Please adhere to the following guidelines:\n"
        f'- The "user_query" should be {ph.query_type}, {ph.query_length}, {ph.clarity}, '
        "and diverse in topic.\n"
        "- All documents must be created independent of the query. Avoid copying the query "
        'verbatim. It\'s acceptable if some parts of the "positive_document" are not topically '
        "related to the query.\n"
        f"- All documents should be at least {ph.num_words} words long.\n"
        f'- The "hard_negative_document" contains some useful information, but it should be less '
        'useful or comprehensive compared to the "positive_document". Please generate '
        f"{_spelled(num_levels)} hard negative documents for contrastive learning based on the "
        "generated query and positive example. These examples should be arranged in order of "
        "decreasing similarity to the query, ranging from highly similar to dissimilar. Ensure "
        "the similarity spans a broad spectrum, and every negative example should be different, "
        "without repeating words from previous examples.\n"
        f"- Both the query and documents should be in {ph.language}.\n"
        "- Do not provide any explanation in any document on why it is relevant or not relevant "
        "to the query.\n"
        f"- Both the query and documents require {ph.difficulty} level education to understand.\n"
        "\n"
        "Your output must always be a JSON object only, do not explain yourself or output "
        "anything else. Be creative!"
    )


_AUGMENT_MARKER = "Generate only the hard negative documents"


def augment_prompt(query: str, positive: str, num_levels: int = 4) -> str:
    """Prompt variant that regenerates negatives for an existing pair."""
    pair = json.dumps({"user_query": query, "positive_document": positive}, ensure_ascii=False, indent=2)
    return (
        "You are given an existing retrieval pair consisting of a user query and its relevant "
        "positive document:\n"
        "\n"
        f"{pair}\n"
        "\n"
        f"{_AUGMENT_MARKER} for this pair, as a JSON object in the following format:\n"
        "\n"
        "{\n"
        f"{_negative_format_block(num_levels)}\n"
        "}\n"
        "\n"
        "Please adhere to the following guidelines:\n"
        f"- Generate {_spelled(num_levels)} hard negative documents for contrastive learning based "
        "on the given query and positive document. These examples should be arranged in order of "
        "decreasing similarity to the query, ranging from highly similar to dissimilar. Ensure "
        "the similarity spans a broad spectrum, and every negative example should be different, "
        "without repeating words from previous examples.\n"
        "- Do not provide any explanation in any document on why it is relevant or not relevant "
        "to the query.\n"
        "\n"
        "Your output must always be a JSON object only, do not explain yourself or output "
        "anything else."
    )


# --------------------------------------------------------------------------
# Reply parsing and validation
# --------------------------------------------------------------------------


def extract_json_object(raw: str) -> dict:
    """First balanced JSON object in a reply, tolerating prose and code fences."""
    decoder = json.JSONDecoder()
    for i, ch in enumerate(raw):
        if ch != "{":
            continue
        try:
            obj, _ = decoder.raw_decode(raw[i:])
        except ValueError:
            continue
        if isinstance(obj, dict):
            return obj
    raise GenerationFormatError("unparseable", "no JSON object found in reply", raw=raw)


def validate_record(
    record: dict,
    num_levels: int = 4,
    source: str = "synthetic",
    category: str = "short-long",
    task: TaskSpec | None = None,
    line: int | None = None,
) -> TrainingTriplet:
    """Build a TrainingTriplet from a raw record dict, or raise a typed violation."""

    def fail(violation: str, message: str):
        raise GenerationFormatError(violation, message, line=line)

    if not isinstance(record, dict):
        fail("unparseable", "record is not a JSON object")
    for name in ("user_query", "positive_document", "hard_negative_document"):
        if name not in record:
            fail("missing_field", f"missing field {name!r}")
    query, positive = record["user_query"], record["positive_document"]
    negatives = record["hard_negative_document"]
    if not isinstance(query, str) or not isinstance(positive, str):
        fail("missing_field", "user_query and positive_document must be strings")
    if not isinstance(negatives, list):
        fail("negative_count", "hard_negative_document must be a list")
    if len(negatives) != num_levels:
        fail("negative_count", f"expected {num_levels} hard negatives, got {len(negatives)}")
    tags, texts = [], []
    for i, entry in enumerate(negatives):
        if not isinstance(entry, dict) or "similarity_level" not in entry or "text" not in entry:
            fail("missing_field", f"hard_negative_document[{i}] needs similarity_level and text")
        tags.append(entry["similarity_level"])
        if not isinstance(entry["text"], str):
            fail("empty_text", f"hard_negative_document[{i}].text must be a string")
        texts.append(entry["text"])
    expected = list(level_tags(num_levels))
    if tags != expected:
        fail("level_order", f"similarity levels {tags} do not match {expected}")
    if len(set(texts)) != len(texts):
        fail("duplicate_negative", "hard negatives must be pairwise distinct")
    if "source" in record:
        source = record["source"]
    if "task_category" in record:
        category = record["task_category"]
    try:
        return TrainingTriplet(
            query=query,
            positive=positive,
            negatives=tuple(texts),
            source=source,
            category=category,
            task=task,
        )
    except GenerationFormatError as exc:
        raise GenerationFormatError(exc.violation, str(exc), line=line) from None


def parse_generation(raw: str, task: TaskSpec, num_levels: int = 4) -> TrainingTriplet:
    """Parse one stage-2 reply into a validated triplet."""
    record = extract_json_object(raw)
    return validate_record(
        record, num_levels=num_levels, source="synthetic", category=task.category, task=task
    )


def _parse_string_list(raw: str) -> list[str]:
    candidates = [raw.strip()]
    fence = re.search(r"```(?:python|json)?\s*(.*?)```", raw, re.DOTALL)
    if fence:
        candidates.insert(0, fence.group(1).strip())
    for text in candidates:
        for loader in (json.loads, _literal_list):
            try:
                value = loader(text)
            except (ValueError, SyntaxError):
                continue
            if isinstance(value, list) and all(isinstance(v, str) for v in value):
                return value
    raise GenerationFormatError("unparseable", "reply is not a list of strings", raw=raw)


def _literal_list(text: str):
    import ast

    return ast.literal_eval(text)


# --------------------------------------------------------------------------
# Backends
# --------------------------------------------------------------------------


@dataclass
class HttpBackendConfig:
    """Chat-completion endpoint settings; the bearer token is read from the
    environment variable named by auth_env at request time."""

    base_url: str
    model: str = "gpt-4o"
    path: str = "/v1/chat/completions"
    auth_env: str = "CHAT_API_TOKEN"
    timeout: float = 30.0
    max_retries: int = 3
    max_parallel: int = 4
    temperature: float = 1.0
    backoff_base: float = 0.5
    backoff_cap: float = 8.0


class HttpChatBackend:
    """POSTs {model, messages, temperature} and reads choices[0].message.content.

    Transient failures (connection errors, timeouts, HTTP 429/5xx) are
    retried with jittered exponential backoff up to max_retries; at most
    max_parallel requests are in flight at once.
    """

    def __init__(self, config: HttpBackendConfig):
        self.config = config
        self.max_parallel = config.max_parallel
        self.stats = {"requests": 0, "retries": 0}
        self._lock = threading.Lock()
        self._sem = threading.BoundedSemaphore(config.max_parallel)
        self._jitter = random.Random(0)
        self._session = requests.Session()

    def _headers(self) -> dict:
        headers = {"Content-Type": "application/json"}
        token = os.environ.get(self.config.auth_env, "")
        if token:
            headers["Authorization"] = f"Bearer {token}"
        return headers

    def complete(self, messages: list[dict], temperature: float | None = None) -> str:
        cfg = self.config
        body = {
            "model": cfg.model,
            "messages": messages,
            "temperature": cfg.temperature if temperature is None else temperature,
        }
        url = cfg.base_url.rstrip("/") + cfg.path
        last_error: Exception | None = None
        with self._sem:
            for attempt in range(cfg.max_retries + 1):
                if attempt:
                    with self._lock:
                        self.stats["retries"] += 1
                    delay = min(cfg.backoff_cap, cfg.backoff_base * 2 ** (attempt - 1))
                    time.sleep(delay * (0.5 + 0.5 * self._jitter.random()))
                with self._lock:
                    self.stats["requests"] += 1
                try:
                    resp = self._session.post(url, json=body, headers=self._headers(), timeout=cfg.timeout)
                except (requests.ConnectionError, requests.Timeout) as exc:
                    last_error = exc
                    continue
                if resp.status_code == 429 or resp.status_code >= 500:
                    last_error = TransportError(f"HTTP {resp.status_code} from {url}")
                    continue
                if resp.status_code != 200:
                    raise TransportError(f"HTTP {resp.status_code} from {url}: {resp.text[:200]}")
                try:
                    content = resp.json()["choices"][0]["message"]["content"]
                except (ValueError, KeyError, IndexError, TypeError):
                    raise TransportError(f"malformed completion envelope from {url}") from None
                if not isinstance(content, str):
                    raise TransportError(f"malformed completion envelope from {url}")
                return content
        raise TransportError(f"backend unreachable after {cfg.max_retries + 1} attempts: {last_error}")


# Disjoint word banks for the mock generator. Content words build queries,
# positives, and the untouched part of negatives; distractor words replace
# content words, so token overlap with the positive falls as the corruption
# rate rises. A unit test asserts the banks stay disjoint.
CONTENT_WORDS = (
    "river", "meadow", "granite", "harvest", "lantern", "orchard", "willow", "thunder",
    "saffron", "timber", "glacier", "falcon", "barley", "copper", "dune", "ember",
    "fern", "gorge", "heron", "ivy", "juniper", "kelp", "lagoon", "marsh",
    "nectar", "otter", "pebble", "quartz", "reed", "sparrow", "tide", "valley",
    "walnut", "yarn", "zephyr", "acorn", "basil", "cedar", "dew", "elm",
    "flint", "grove", "hazel", "iris", "jade", "krill", "lichen", "maple",
    "nettle", "oak", "pine", "quince", "raven", "sage", "thistle", "umber",
    "vine", "wheat", "yew", "algae", "boulder", "canyon", "delta", "estuary",
    "fjord", "geyser", "hollow", "inlet", "jetty", "knoll", "ledge", "mesa",
    "notch", "oasis", "prairie", "quarry", "ridge", "summit", "tundra", "upland",
    "vista", "wetland", "ash", "briar", "clover", "daisy", "elder", "foxglove",
    "garlic", "heather", "indigo", "jasmine", "kale", "lavender", "mint", "nutmeg",
    "olive", "parsley", "rosemary", "sorrel", "tarragon", "verbena", "wisteria", "yarrow",
    "almond", "berry", "chestnut", "date", "fig", "grape", "honey", "lemon",
    "mango", "oat", "peach", "plum", "rice", "squash", "tomato", "turnip",
    "badger", "crane", "deer", "eagle", "ferret", "goose", "hare", "ibex",
    "jackal", "kestrel", "lark", "mole", "newt", "owl", "pike", "quail",
    "rabbit", "seal", "toad", "urchin", "vole", "weasel", "yak", "zebra",
    "anchor", "barrel", "compass", "drum", "easel", "flute", "gable", "hammock",
    "ingot", "jug", "kiln", "loom", "mortar", "needle", "oar", "plough",
    "quilt", "rudder", "saddle", "trowel", "urn", "vellum", "wick", "yoke",
    "amber", "bronze", "coral", "dusk", "emerald", "frost", "gold", "harbor",
    "island", "jungle", "keel", "lake", "moss", "north", "ocean", "peak",
    "rain", "snow", "trail", "umbra", "vapor", "wave", "yonder", "zenith",
    "bloom", "creek", "drift", "echo", "flame", "glow", "haze", "icicle",
    "jolt", "kindle", "lull", "mist", "nook", "orbit", "pond", "quiver",
    "ripple", "shade", "torrent", "udder", "veil", "whirl", "yield", "zeal",
    "alder", "birch", "cotton", "dill", "endive", "fennel", "ginger", "hops",
    "inkberry", "jicama", "kumquat", "leek", "millet", "nori", "onion", "pepper",
    "quinoa", "radish", "spelt", "tuber", "ugli", "vanilla", "wasabi", "yam",
    "apiary", "brook", "cairn", "dale", "eyrie", "ford", "glen", "heath",
    "isle", "jamb", "kettle", "loch", "moor", "ness", "outcrop", "pass",
    "reef", "shoal", "tor", "vale", "weir", "yardarm", "zinc", "atoll",
    "bay", "cliff", "dell", "escarp", "flat", "gully", "hill", "ice",
    "jet", "key", "lowland", "mound", "narrows", "overlook", "plateau", "quicksand",
    "rapids", "sandbar", "terrace", "undertow", "volcano", "waterfall", "yardland", "zephyrine",
)

DISTRACTOR_WORDS = (
    "ledger", "invoice", "terminal", "router", "firmware", "protocol", "cache", "kernel",
    "broker", "audit", "payroll", "tariff", "quota", "merger", "patent", "escrow",
    "subpoena", "verdict", "statute", "clause", "briefing", "memo", "agenda", "quorum",
    "ballot", "mandate", "treaty", "embassy", "customs", "visa", "passport", "census",
    "pixel", "cursor", "modem", "server", "backup", "browser", "plugin", "widget",
    "toolbar", "sandbox", "firewall", "gateway", "packet", "socket", "thread", "buffer",
    "compiler", "debugger", "syntax", "token", "parser", "schema", "query", "index",
    "database", "cluster", "shard", "replica", "latency", "uptime", "outage", "patch",
    "scooter", "subway", "tram", "taxi", "freeway", "overpass", "toll", "transit",
    "depot", "turnstile", "platform", "timetable", "fare", "commuter", "garage", "asphalt",
    "billboard", "storefront", "awning", "elevator", "lobby", "mezzanine", "penthouse", "skylight",
    "scaffold", "hoist", "girder", "rebar", "cement", "drywall", "conduit", "duct",
    "statement", "receipt", "refund", "coupon", "voucher", "discount", "checkout", "cart",
    "warranty", "shipment", "courier", "parcel", "freight", "pallet", "barcode", "inventory",
    "stadium", "referee", "penalty", "overtime", "playoff", "roster", "scoreboard", "huddle",
    "dugout", "bullpen", "locker", "jersey", "mascot", "tailgate", "grandstand", "bleacher",
    "sonata", "tempo", "chord", "octave", "refrain", "encore", "podium", "baton",
    "libretto", "aria", "crescendo", "maestro", "quartet", "recital", "solo", "vibrato",
    "satire", "memoir", "sequel", "prologue", "epilogue", "chapter", "paragraph", "footnote",
    "glossary", "appendix", "preface", "manuscript", "editor", "publisher", "royalty", "byline",
    "algebra", "theorem", "integer", "vector", "matrix", "scalar", "modulus", "axiom",
    "lemma", "corollary", "proof", "conjecture", "fraction", "decimal", "exponent", "logarithm",
    "voltage", "circuit", "resistor", "capacitor", "diode", "transistor", "amplifier", "antenna",
    "radar", "sonar", "laser", "photon", "neutron", "proton", "electron", "isotope",
    "molecule", "polymer", "catalyst", "solvent", "reagent", "titration", "beaker", "pipette",
    "syringe", "scalpel", "forceps", "gauze", "splint", "dosage", "placebo", "vaccine",
    "stethoscope", "thermometer", "bandage", "clinic", "ward", "triage", "gurney", "orderly",
    "tuition", "syllabus", "lecture", "seminar", "campus", "dormitory", "registrar", "dean",
    "diploma", "transcript", "semester", "midterm", "thesis", "citation", "rubric", "plagiarism",
    "mortgage", "annuity", "dividend", "portfolio", "hedge", "futures", "options", "bond",
    "equity", "liquidity", "solvency", "arbitrage", "collateral", "default", "insurer", "premium",
    "actuary", "underwriter", "adjuster", "claimant", "beneficiary", "trustee", "fiduciary", "probate",
    "gavel", "docket", "plaintiff", "defendant", "juror", "bailiff", "notary", "affidavit",
    "deposition", "injunction", "appeal", "parole", "probation", "warrant", "summons", "tribunal",
    "senate", "congress", "cabinet", "ministry", "bureau", "agency", "precinct", "municipality",
    "ordinance", "zoning", "easement", "annexation", "referendum", "incumbent", "lobbyist", "whip",
)

# Stage-1 task grammar pieces.
_TASK_VERBS = ("Retrieve", "Find", "Search for", "Locate", "Surface")
_TASK_DOCS = (
    "technical articles", "encyclopedia passages", "forum answers", "news reports",
    "product descriptions", "research summaries", "how-to guides", "reference entries",
)
_TASK_RELATIONS = ("that answer", "that match", "relevant to", "that elaborate on")
_TASK_QUERIES = (
    "short keyword queries", "natural-language questions", "single-sentence claims",
    "conversational prompts", "spoken-style requests",
)
_TASK_DOMAINS = (
    "home gardening", "marine biology", "personal finance", "ancient history",
    "network security", "nutrition science", "urban planning", "amateur astronomy",
    "automotive repair", "classical music", "wildlife photography", "regional cooking",
    "weather forecasting", "textile crafts", "trail hiking", "board games",
    "bird migration", "renewable energy", "film restoration", "beekeeping",
    "tidal ecosystems", "mountain geology", "herbal medicine", "antique furniture",
    "river navigation", "cheese making", "orchard care", "night photography",
)


class MockChatBackend:
    """Deterministic stand-in for a chat-completion API.

    Every reply is a pure function of (seed, prompt text), so runs are
    reproducible regardless of request order or concurrency. Stage-2 replies
    plant the multi-granularity structure: negative level k replaces
    ceil(rate_k * W) of the positive's W words with distractor words, with
    rates (0.15, 0.35, 0.60, 0.90) from hardest to easiest, so token overlap
    with the positive strictly decreases as k grows.
    """

    def __init__(self, seed: int = 0, max_parallel: int = 4):
        self.seed = int(seed)
        self.max_parallel = max_parallel

    def _rng(self, prompt: str) -> np.random.Generator:
        digest = sha256(prompt.encode("utf-8")).digest()
        return np.random.default_rng([self.seed, int.from_bytes(digest[:8], "big")])

    def complete(self, messages: list[dict], temperature: float | None = None) -> str:
        prompt = messages[-1]["content"]
        rng = self._rng(prompt)
        if prompt.startswith("Brainstorm"):
            return self._stage1_reply(rng)
        if _AUGMENT_MARKER in prompt:
            return self._augment_reply(prompt, rng)
        return self._stage2_reply(prompt, rng)

    def _stage1_reply(self, rng: np.random.Generator) -> str:
        tasks: list[str] = []
        seen: set[str] = set()
        while len(tasks) < 20:
            sentence = " ".join(
                (
                    _TASK_VERBS[rng.integers(len(_TASK_VERBS))],
                    _TASK_DOCS[rng.integers(len(_TASK_DOCS))],
                    _TASK_RELATIONS[rng.integers(len(_TASK_RELATIONS))],
                    _TASK_QUERIES[rng.integers(len(_TASK_QUERIES))],
                    "about",
                    _TASK_DOMAINS[rng.integers(len(_TASK_DOMAINS))],
                )
            ) + "."
            if sentence.lower() not in seen:
                seen.add(sentence.lower())
                tasks.append(sentence)
        return json.dumps(tasks, ensure_ascii=False)

    @staticmethod
    def _requested_words(prompt: str) -> int:
        m = re.search(r"at least (\d+) words long", prompt)
        return int(m.group(1)) if m else 100

    @staticmethod
    def _requested_levels(prompt: str) -> int:
        return max(prompt.count('"similarity_level"'), 1)

    @staticmethod
    def _rates(num_levels: int) -> np.ndarray:
        if num_levels == len(MOCK_CORRUPTION_RATES):
            return np.asarray(MOCK_CORRUPTION_RATES)
        return np.linspace(MOCK_CORRUPTION_RATES[0], MOCK_CORRUPTION_RATES[-1], num_levels)

    @staticmethod
    def _corrupt(words: Sequence[str], rate: float, level: int, num_levels: int,
                 rng: np.random.Generator) -> list[str]:
        """Replace ceil(rate * W) words with distractors from a per-level bank slice."""
        out = list(words)
        count = min(len(out), math.ceil(rate * len(out)))
        positions = rng.choice(len(out), size=count, replace=False)
        bank = DISTRACTOR_WORDS[level::num_levels]
        for p in positions:
            out[p] = bank[rng.integers(len(bank))]
        return out

    def _negatives(self, words: Sequence[str], num_levels: int, rng: np.random.Generator) -> list[dict]:
        rates = self._rates(num_levels)
        tags = level_tags(num_levels)
        entries = []
        for level, (tag, rate) in enumerate(zip(tags, rates)):
            text = " ".join(self._corrupt(words, float(rate), level, num_levels, rng))
            entries.append({"similarity_level": tag, "text": text})
        return entries

    def _stage2_reply(self, prompt: str, rng: np.random.Generator) -> str:
        w = self._requested_words(prompt)
        num_levels = self._requested_levels(prompt)
        topic = [CONTENT_WORDS[i] for i in rng.integers(len(CONTENT_WORDS), size=w)]
        # Query words come from the early part of the document so that the
        # byte-level encoder, which truncates long inputs, still sees them.
        prefix: list[str] = []
        for word in topic[:12]:
            if word not in prefix:
                prefix.append(word)
        q_len = min(len(prefix), int(rng.integers(4, 9)))
        picks = sorted(rng.choice(len(prefix), size=q_len, replace=False))
        query = " ".join(prefix[i] for i in picks)
        record = {
            "user_query": query,
            "positive_document": " ".join(topic),
            "hard_negative_document": self._negatives(topic, num_levels, rng),
        }
        return json.dumps(record, ensure_ascii=False)

    def _augment_reply(self, prompt: str, rng: np.random.Generator) -> str:
        pair = extract_json_object(prompt)
        words = str(pair.get("positive_document", "")).split() or ["document"]
        num_levels = self._requested_levels(prompt)
        return json.dumps({"hard_negative_document": self._negatives(words, num_levels, rng)},
                          ensure_ascii=False)


# --------------------------------------------------------------------------
# Generation pipeline
# --------------------------------------------------------------------------


def brainstorm_tasks(category: str, n: int, backend) -> list[TaskSpec]:
    """Stage 1: up to n distinct task specs for one category."""
    if n < 1:
        raise ContractError(f"n must be >= 1, got {n}")
    raw = backend.complete([{"role": "user", "content": stage1_prompt(category)}])
    lines = _parse_string_list(raw)
    specs: list[TaskSpec] = []
    seen: set[str] = set()
    for line in lines:
        text = " ".join(line.split())
        if not text or text.lower() in seen:
            continue
        seen.add(text.lower())
        specs.append(TaskSpec(category=category, description=text))
        if len(specs) == n:
            break
    return specs


def generate_triplet(
    task: TaskSpec,
    ph: PromptPlaceholders,
    backend,
    num_levels: int = 4,
    retry_rng: np.random.Generator | None = None,
) -> TrainingTriplet:
    """Stage 2: render, call, parse; one placeholder-resampled retry on a
    validation failure before giving up."""
    prompt = render_prompt(task, ph, num_levels=num_levels)
    try:
        return parse_generation(
            backend.complete([{"role": "user", "content": prompt}]), task, num_levels=num_levels
        )
    except GenerationFormatError:
        if retry_rng is None:
            raise
        ph2 = sample_placeholders(retry_rng, language=ph.language)
        prompt = render_prompt(task, ph2, num_levels=num_levels)
        return parse_generation(
            backend.complete([{"role": "user", "content": prompt}]), task, num_levels=num_levels
        )


def augment_retrieval_pair(query: str, positive: str, backend, num_levels: int = 4) -> TrainingTriplet:
    """Regenerate multi-granularity negatives for an existing (query, positive) pair."""
    if not query.strip():
        raise ContractError("query must be non-empty")
    if not positive.strip():
        raise ContractError("positive must be non-empty")
    prompt = augment_prompt(query, positive, num_levels=num_levels)
    raw = backend.complete([{"role": "user", "content": prompt}])
    record = extract_json_object(raw)
    record.setdefault("user_query", query)
    record.setdefault("positive_document", positive)
    return validate_record(
        record,
        num_levels=num_levels,
        source="retrieval_augmented",
        category=RETRIEVAL_CATEGORY,
    )


@dataclass
class SynthReport:
    requested: int
    accepted: int = 0
    rejected: dict = field(default_factory=dict)

    def reject(self, violation: str):
        self.rejected[violation] = self.rejected.get(violation, 0) + 1

    def to_dict(self) -> dict:
        return {
            "requested": self.requested,
            "accepted": self.accepted,
            "rejected": dict(sorted(self.rejected.items())),
        }


def _normalized_mix(category_mix: dict | None) -> tuple[list[str], np.ndarray]:
    mix = dict(DEFAULT_CATEGORY_MIX if category_mix is None else category_mix)
    for cat, weight in mix.items():
        if cat not in CATEGORIES:
            raise ConfigError(f"unknown category {cat!r} in mix")
        if weight < 0:
            raise ConfigError(f"negative weight for category {cat!r}")
    total = sum(mix.values())
    if total <= 0:
        raise ConfigError("category mix weights must sum to a positive value")
    cats = sorted(mix)
    return cats, np.asarray([mix[c] / total for c in cats])


def synthesize_dataset(
    backend,
    n: int,
    seed: int,
    category_mix: dict | None = None,
    num_levels: int = 4,
    language: str = "English",
    tasks_per_category: int = 12,
) -> tuple[list[TrainingTriplet], SynthReport]:
    """Full two-stage pipeline: brainstorm tasks, then generate n triplets.

    Requests run with at most backend.max_parallel in flight; results are
    collected in submission order, so (seed, config) fully determines the
    emitted dataset under a deterministic backend. Invalid generations are
    skipped and counted, never repaired.
    """
    if n < 1:
        raise ConfigError(f"n must be >= 1, got {n}")
    cats, probs = _normalized_mix(category_mix)
    tasks = {c: brainstorm_tasks(c, tasks_per_category, backend) for c in cats if probs[cats.index(c)] > 0}
    rng = np.random.default_rng([seed, 0x5EED])
    jobs = []
    for i in range(n):
        cat = cats[rng.choice(len(cats), p=probs)]
        task = tasks[cat][rng.integers(len(tasks[cat]))]
        ph = sample_placeholders(rng, language=language)
        jobs.append((i, task, ph))

    report = SynthReport(requested=n)

    def run(job):
        i, task, ph = job
        retry_rng = np.random.default_rng([seed, 0x9E77, i])
        try:
            return generate_triplet(task, ph, backend, num_levels=num_levels, retry_rng=retry_rng)
        except GenerationFormatError as exc:
            return exc

    workers = max(1, getattr(backend, "max_parallel", 1))
    triplets: list[TrainingTriplet] = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for result in pool.map(run, jobs):
            if isinstance(result, GenerationFormatError):
                report.reject(result.violation)
            else:
                report.accepted += 1
                triplets.append(result)
    return triplets, report


def augment_pairs(
    backend,
    pairs: Iterable[tuple[str, str]],
    num_levels: int = 4,
) -> tuple[list[TrainingTriplet], SynthReport]:
    """augment_retrieval_pair over many pairs with bounded parallelism."""
    pairs = list(pairs)
    report = SynthReport(requested=len(pairs))

    def run(pair):
        try:
            return augment_retrieval_pair(pair[0], pair[1], backend, num_levels=num_levels)
        except GenerationFormatError as exc:
            return exc

    workers = max(1, getattr(backend, "max_parallel", 1))
    triplets: list[TrainingTriplet] = []
    with ThreadPoolExecutor(max_workers=workers) as pool:
        for result in pool.map(run, pairs):
            if isinstance(result, GenerationFormatError):
                report.reject(result.violation)
            else:
                report.accepted += 1
                triplets.append(result)
    return triplets, report
