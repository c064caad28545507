import random
import string

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from ragehr.ehr import normalize_note
from ragehr.ehr.notes import ClinicalNote
from ragehr.gateway import DiskCache, Gateway, KeywordChat, ScriptedChat, TransportError
from ragehr.note_entities import (
    ExtractionError,
    ExtractionPrompt,
    extract_note_entities,
    extract_round,
    parse_entity_list,
    parse_verdicts,
    refine,
)

VOCAB = ["sepsis", "pneumonia", "acute kidney injury", "heart failure", "diabetes"]


def gw(backend, cache=None):
    return Gateway({"extractor": backend}, cache=cache, sleep=lambda s: None)


def verdict_reply(confirm):
    def reply(prompt):
        if "decide whether it names a disease" in prompt:
            terms = [l[2:] for l in prompt.split("Terms:\n", 1)[1].splitlines() if l.startswith("- ")]
            return "\n".join(f"{t}: {'yes' if confirm(t) else 'no'}" for t in terms)
        return None

    return reply


def scripted(extraction_replies, confirm=lambda t: True):
    verdicts = verdict_reply(confirm)
    queue = list(extraction_replies)

    def reply(prompt):
        v = verdicts(prompt)
        if v is not None:
            return v
        return queue.pop(0) if len(queue) > 1 else queue[0]

    return ScriptedChat(reply)


def test_parse_comma_list():
    assert parse_entity_list("Sepsis, Pneumonia") == ({"sepsis", "pneumonia"}, True)


def test_parse_prose_is_empty():
    assert parse_entity_list("No diseases found.")[0] == set()


def test_parse_bullets_and_newlines():
    got, ok = parse_entity_list("Diseases:\n- Sepsis\n2. Heart failure\n* copd")
    assert ok and got == {"sepsis", "heart failure", "copd"}


def test_parse_unparseable_sentence_flagged():
    got, ok = parse_entity_list("The patient appears to have several chronic conditions.")
    assert got == set() and not ok


def test_parse_verdicts():
    assert parse_verdicts("sepsis: yes\nfatigue: no\n- Copd: Yes") == {"sepsis", "copd"}


def test_extract_round_fixture_list():
    note = normalize_note("sepsis and pneumonia")
    chat = ScriptedChat(["SEPSIS, Pneumonia"])
    assert extract_round(note, gw(chat)) == {"sepsis", "pneumonia"}
    assert note.text in chat.prompts[0]


def test_prompt_contains_note_once():
    note = "xq unusual phrase with renal failure zz"
    prompt = ExtractionPrompt.load().render(note)
    assert prompt.count(note) == 1
    assert prompt.index("Clinical note:\n" + note) > prompt.index("Example")


def test_refine_drops_hallucinations():
    note = normalize_note("patient has sepsis")
    assert refine({"sepsis", "diabetes"}, note, gw(scripted(["none"]))) == {"sepsis"}


def test_refine_dedups_after_normalization():
    note = normalize_note("patient has sepsis")
    assert refine({"sepsis", "Sepsis "}, note, gw(scripted(["none"]))) == {"sepsis"}


def test_refine_type_filter():
    note = normalize_note("sepsis with fatigue")
    chat = scripted(["none"], confirm=lambda t: t == "sepsis")
    assert refine({"sepsis", "fatigue"}, note, gw(chat)) == {"sepsis"}


def test_refine_gateway_failure_is_an_error():
    note = normalize_note("sepsis")
    with pytest.raises(TransportError):
        refine({"sepsis"}, note, Gateway({"extractor": ScriptedChat(fail_first=5)}, max_attempts=2, sleep=lambda s: None))


def test_refine_idempotent():
    note = normalize_note("sepsis fatigue pneumonia")
    chat = scripted(["none"], confirm=lambda t: t != "fatigue")
    once = refine({"sepsis", "fatigue", "pneumonia", "flu"}, note, gw(chat))
    assert refine(once, note, gw(chat)) == once


def test_converges_after_second_round():
    note = normalize_note("sepsis and pneumonia")
    ents, trace = extract_note_entities(note, gw(scripted(["sepsis, pneumonia"])), max_rounds=3)
    assert ents == {"sepsis", "pneumonia"}
    assert trace.converged and trace.total_rounds == 2


def test_new_entity_each_round_hits_cap():
    note = normalize_note("alpha beta gamma delta")
    ents, trace = extract_note_entities(note, gw(scripted(["alpha", "beta", "gamma", "delta"])), max_rounds=3)
    assert trace.total_rounds == 3 and not trace.converged
    assert ents == {"alpha", "beta", "gamma"}
    accepted = [r.accepted for r in trace.rounds]
    assert all(a <= b for a, b in zip(accepted, accepted[1:]))


def test_empty_note():
    chat = ScriptedChat(["sepsis"])
    ents, trace = extract_note_entities(ClinicalNote(""), gw(chat))
    assert ents == set() and trace.total_rounds == 1 and chat.calls == 0


def test_errors_carry_round():
    note = normalize_note("sepsis")
    chat = ScriptedChat(["sepsis"], fail_first=10)
    with pytest.raises(ExtractionError) as info:
        extract_note_entities(note, Gateway({"extractor": chat}, max_attempts=1, sleep=lambda s: None))
    assert info.value.round_index == 1


def test_max_rounds_validated():
    with pytest.raises(ValueError):
        extract_note_entities(normalize_note("x"), gw(ScriptedChat()), max_rounds=0)


def test_deterministic_with_cache(tmp_path):
    note = normalize_note("history of heart failure and sepsis, rule out pneumonia")
    first = extract_note_entities(note, gw(KeywordChat(VOCAB), DiskCache(tmp_path)))
    replay_chat = ScriptedChat(["should not be called"])
    second = extract_note_entities(note, gw(replay_chat, DiskCache(tmp_path)))
    assert replay_chat.calls == 0
    assert first[0] == second[0]
    assert [r.raw_output for r in first[1].rounds] == [r.raw_output for r in second[1].rounds]


def corrupted_reply(rng, note_words):
    real = rng.sample(note_words, k=min(len(note_words), rng.randint(0, 3)))
    fake = ["".join(rng.choices(string.ascii_lowercase, k=rng.randint(4, 9))) for _ in range(rng.randint(1, 4))]
    fake += [w.upper() + "itis" for w in rng.sample(note_words, k=1)]
    items = real + fake
    rng.shuffle(items)
    sep = rng.choice([", ", "\n", "\n- ", "; "])
    return sep.join(items)


def test_randomized_hallucinations_never_survive():
    rng = random.Random(0)
    words = ["sepsis", "pneumonia", "anemia", "copd", "stroke", "asthma", "gout", "lupus"]
    for _ in range(200):
        note = normalize_note(" ".join(rng.sample(words, k=4)) + " noted on exam")
        replies = [corrupted_reply(rng, note.text.split()) for _ in range(3)]
        ents, trace = extract_note_entities(note, gw(scripted(replies)), max_rounds=3)
        assert all(e in note.text for e in ents)
        for r in trace.rounds:
            assert all(e in note.text for e in r.accepted)


@given(st.lists(st.text(alphabet="abcdefg ,\n-", max_size=30), min_size=1, max_size=4), st.text(alphabet="abcdefg ", max_size=60))
@settings(max_examples=200, deadline=None)
def test_soundness_property(replies, raw_note):
    note = normalize_note(raw_note)
    ents, _ = extract_note_entities(note, gw(scripted(replies)), max_rounds=3)
    assert all(e and e in note.text for e in ents)
