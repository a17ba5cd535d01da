import json

import numpy as np
import pytest
from hypothesis import given
from hypothesis import strategies as st

from xmrag.corpus import write_feature_matrix
from xmrag.errors import DecompositionError, LlmParseError, ServiceError, ValidationError
from xmrag.query import (
    ReplayLlmClient,
    Subquery,
    attach_embeddings,
    decompose_llm,
    decompose_rule_based,
    load_prompt_template,
    make_query,
    parse_entity_line,
)

# the six in-context captions and their expected entity lists
REPLAY_CASES = [
    ("two cars are traveling on the road and waiting at the traffic light.",
     ["cars", "road", "traffic light"]),
    ("duplicate images of a girl with a blue tank top and black tennis skirt "
     "holding a tennis racquet and swinging at a ball.",
     ["girl", "blue tank top", "black tennis skirt", "tennis racqet", "ball"]),
    ("the window showing a traffic signal is covered in droplets of rainwater.",
     ["traffic signal", "droplets of rainwater"]),
    ('an overhead shot captures an intersection with a "go colts" sign.',
     ["intersection", '"go colts" sign']),
    ("a van with a face painted on its hood driving through street in china.",
     ["van", "a face painted on its hood", "street in china"]),
    ("two men, one with a black shirt and the other with a white shirt, are "
     "kicking each other without making contact.",
     ["men", "black shirt", "white shirt"]),
]


class TestRuleBased:
    def test_comma_and_split(self):
        out = decompose_rule_based("small red bird, black wings, and small black beak")
        assert [s.text for s in out] == ["small red bird", "black wings", "small black beak"]

    def test_style_template_keeps_clause(self):
        out = decompose_rule_based("Forest Road in the style of Theodore Rousseau")
        assert [s.text for s in out] == ["Forest Road", "style of Theodore Rousseau"]

    def test_draw_template(self):
        out = decompose_rule_based("Draw a Vermilion Flycatcher. small red bird, black wings")
        assert [s.text for s in out] == ["Vermilion Flycatcher", "small red bird", "black wings"]

    def test_blank_raises(self):
        with pytest.raises(DecompositionError):
            decompose_rule_based("   ")

    def test_duplicates_dropped_keep_first(self):
        out = decompose_rule_based("red bird, Red Bird, blue sky")
        assert [s.text for s in out] == ["red bird", "blue sky"]

    def test_semicolons(self):
        out = decompose_rule_based("a; b and c")
        assert [s.text for s in out] == ["a", "b", "c"]

    @given(st.lists(
        st.text(alphabet="abcdefgh ", min_size=1, max_size=12).filter(
            lambda t: t.strip() and "and" not in t
        ),
        min_size=1, max_size=5,
    ))
    def test_idempotent_on_own_output(self, fragments):
        raw = ", ".join(fragments)
        try:
            once = [s.text for s in decompose_rule_based(raw)]
        except DecompositionError:
            return
        twice = [s.text for s in decompose_rule_based(", ".join(once))]
        assert once == twice


def make_replay_client():
    return ReplayLlmClient({
        caption: "Entity: " + ", ".join(entities) for caption, entities in REPLAY_CASES
    })


class TestLlmDecomposition:
    @pytest.mark.parametrize("caption,expected", REPLAY_CASES)
    def test_replay_golden(self, caption, expected):
        out = decompose_llm(caption, make_replay_client())
        assert [s.text for s in out] == expected

    def test_prompt_contains_caption_and_examples(self):
        client = make_replay_client()
        decompose_llm(REPLAY_CASES[0][0], client)
        prompt = client.calls[0]
        assert REPLAY_CASES[0][0] in prompt
        for caption, _ in REPLAY_CASES:
            assert caption in prompt  # the six in-context examples ride along

    def test_unparseable_completion(self):
        client = ReplayLlmClient({"anything": "I cannot help"})
        with pytest.raises(LlmParseError) as err:
            decompose_llm("anything", client)
        assert err.value.completion == "I cannot help"

    def test_parse_takes_final_entity_line(self):
        completion = "Entity: wrong, draft\nsome text\nEntity: cat, dog"
        assert parse_entity_line(completion) == ["cat", "dog"]

    def test_replay_without_match_raises(self):
        with pytest.raises(ServiceError):
            decompose_llm("unknown caption", ReplayLlmClient({}))


class TestPromptTemplate:
    def test_placeholder_and_examples_pinned(self):
        template = load_prompt_template()
        assert "{caption}" in template
        assert template.count("Caption:") == 7  # six examples plus the slot
        assert template.count("Entity:") == 7
        for caption, entities in REPLAY_CASES:
            assert caption in template
            assert ", ".join(entities) in template

    def test_template_bytes_golden(self):
        import hashlib
        template = load_prompt_template().encode("utf-8")
        digest = hashlib.sha256(template).hexdigest()
        golden = json.loads(
            (__import__("pathlib").Path(__file__).parent / "data" / "prompt_digest.json")
            .read_text()
        )
        assert digest == golden["sha256"], "decomposition prompt asset drifted"


class TestAttachEmbeddings:
    def _query(self, n=3):
        return make_query("q", [Subquery(text=f"part {i}") for i in range(n)])

    def test_norms_and_order(self, tmp_path):
        rows = np.array([[3.0, 4.0, 0.0], [0.0, 2.0, 0.0], [1.0, 1.0, 1.0]], dtype=np.float32)
        path = tmp_path / "emb.xmrg"
        write_feature_matrix(path, rows)
        q = attach_embeddings(self._query(), path)
        assert q.texts == ["part 0", "part 1", "part 2"]
        for sub in q.subqueries:
            assert abs(np.linalg.norm(sub.embedding) - 1.0) < 1e-5

    def test_row_count_mismatch(self, tmp_path):
        path = tmp_path / "emb.xmrg"
        write_feature_matrix(path, np.ones((2, 3), dtype=np.float32))
        with pytest.raises(ValidationError, match="2 rows"):
            attach_embeddings(self._query(3), path)

    def test_zero_row(self, tmp_path):
        rows = np.array([[1.0, 0.0], [0.0, 0.0], [0.0, 1.0]], dtype=np.float32)
        path = tmp_path / "emb.xmrg"
        write_feature_matrix(path, rows)
        with pytest.raises(ValidationError, match="zero embedding"):
            attach_embeddings(self._query(3), path)
