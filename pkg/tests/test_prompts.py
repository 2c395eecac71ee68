import pytest

from zseval import prompts
from zseval.manifest import CategorySet
from zseval.prompts import (
    CountMismatch,
    GenerationPolicy,
    MissingInput,
    build_description_request,
    build_prompt_set,
    compose_prompts,
    generate_category_descriptions,
    parse_description_response,
    read_prompt_set,
    write_prompt_set,
)


class TestDescriptionRequest:
    def test_contains_category_context_and_count(self):
        policy = GenerationPolicy(sentence_count=20)
        request = build_description_request("British Shorthairs", "pet breeds", policy)
        text = request["messages"][0]["content"]
        assert "British Shorthairs" in text
        assert "pet breeds" in text
        assert "20" in text

    def test_satellite_context(self):
        policy = GenerationPolicy(sentence_count=5)
        request = build_description_request("annual crop land", "satellite imagery", policy)
        assert "satellite imagery" in request["messages"][0]["content"]

    def test_single_sentence(self):
        policy = GenerationPolicy(sentence_count=1)
        request = build_description_request("tabby", "pets", policy)
        assert "exactly 1 numbered" in request["messages"][0]["content"]


class TestParseDescriptionResponse:
    def test_basic_numbered(self):
        text = "1. A stocky cat.\n2. Dense plush coat."
        assert parse_description_response(text, 2) == ["A stocky cat.", "Dense plush coat."]

    def test_count_mismatch_carries_found(self):
        text = "1. A stocky cat.\n2. Dense plush coat."
        with pytest.raises(CountMismatch) as err:
            parse_description_response(text, 3)
        assert err.value.found == 2

    def test_preamble_dropped(self):
        lines = [f"{i}. Sentence number {i} about the breed." for i in range(1, 21)]
        text = "Sure! Here are the sentences you asked for:\n" + "\n".join(lines)
        parsed = parse_description_response(text, 20)
        assert len(parsed) == 20
        assert parsed[0] == "Sentence number 1 about the breed."
        assert all("Sure!" not in s for s in parsed)

    @pytest.mark.parametrize(
        "marker", ["1. ", "1) ", "1] ", "1: ", "- ", "* ", "• "]
    )
    def test_marker_styles(self, marker):
        text = f"{marker}Only sentence."
        assert parse_description_response(text, 1) == ["Only sentence."]

    def test_plain_lines_fallback(self):
        text = "A cat.\nA big cat."
        assert parse_description_response(text, 2) == ["A cat.", "A big cat."]

    def test_idempotent_on_renumbered_output(self):
        sentences = ["A round face.", "Short dense fur.", "Copper eyes."]
        renumbered = "\n".join(f"{i+1}. {s}" for i, s in enumerate(sentences))
        assert parse_description_response(renumbered, 3) == sentences


class TestComposePrompts:
    def test_baseline_identity(self):
        assert compose_prompts("tabby", "baseline") == ["tabby"]

    def test_handcrafted_template(self):
        assert compose_prompts("tabby", "handcrafted", "A photo of a {}.") == [
            "A photo of a tabby."
        ]

    def test_combined_concatenation(self):
        got = compose_prompts(
            "archery", "combined", "A video of a person {}.", ["An archer draws a bow."]
        )
        assert got == ["A video of a person archery. An archer draws a bow."]

    def test_gpt_passthrough(self):
        sentences = ["One.", "Two."]
        assert compose_prompts("x", "gpt", gpt_sentences=sentences) == sentences

    def test_missing_inputs(self):
        with pytest.raises(MissingInput):
            compose_prompts("x", "handcrafted")
        with pytest.raises(MissingInput):
            compose_prompts("x", "gpt")
        with pytest.raises(MissingInput):
            compose_prompts("x", "combined", template="T {}")
        with pytest.raises(MissingInput):
            compose_prompts("x", "combined", gpt_sentences=["s"])

    def test_sth_sth_names_pass_through_verbatim(self):
        name = "Pushing something so it spins"
        assert compose_prompts(name, "baseline") == [name]
        assert compose_prompts(name, "handcrafted", "A video of a person {}.") == [
            f"A video of a person {name}."
        ]


class TestDefaultTemplates:
    def test_per_modality_templates(self):
        assert prompts.DEFAULT_TEMPLATES["image"] == "A photo of a {}."
        assert prompts.DEFAULT_TEMPLATES["video"] == "A video of a person {}."
        assert prompts.DEFAULT_TEMPLATES["pointcloud"] == "A point cloud depth map of a {}."

    def test_build_prompt_set_uses_modality_default(self):
        cats = CategorySet("pets", ("tabby", "siamese"), "image")
        ps = build_prompt_set(cats, "handcrafted")
        assert ps.sentences[0] == ("A photo of a tabby.",)
        assert ps.sentence_count == 1


class TestPromptSetInvariants:
    def test_mode_size_matches_compose(self):
        cats = CategorySet("d", ("a b", "c d"), "video")
        for mode, sentences in [
            ("baseline", None),
            ("handcrafted", None),
            ("gpt", [["s1", "s2"], ["t1", "t2"]]),
            ("combined", [["s1", "s2"], ["t1", "t2"]]),
        ]:
            ps = build_prompt_set(cats, mode, gpt_sentences=sentences)
            for i, name in enumerate(cats.categories):
                composed = compose_prompts(
                    name,
                    mode,
                    ps.template,
                    sentences[i] if sentences else None,
                )
                assert list(ps.sentences[i]) == composed
                assert len(composed) == ps.sentence_count

    def test_ragged_blocks_rejected(self):
        with pytest.raises(ValueError):
            prompts.PromptSet("d", "gpt", ("a", "b"), (("x", "y"), ("z",)), 2)

    def test_empty_sentence_rejected(self):
        with pytest.raises(ValueError):
            prompts.PromptSet("d", "gpt", ("a",), (("", ),), 1)


class TestPromptSetFiles:
    def test_round_trip(self, tmp_path):
        cats = CategorySet("Oxford Pets", ("tabby cat", "siamese"), "image")
        ps = build_prompt_set(cats, "gpt", gpt_sentences=[["A.", "B."], ["C.", "D."]])
        path = tmp_path / "gpt.txt"
        write_prompt_set(ps, path)
        loaded = read_prompt_set(path)
        assert loaded.dataset_name == "Oxford Pets"
        assert loaded.mode == "gpt"
        assert loaded.sentence_count == 2
        assert loaded.category_names == ps.category_names
        assert loaded.sentences == ps.sentences

    def test_write_read_write_is_byte_identical(self, tmp_path):
        cats = CategorySet("d", ("a", "b"), "image")
        ps = build_prompt_set(cats, "baseline")
        p1, p2 = tmp_path / "a.txt", tmp_path / "b.txt"
        write_prompt_set(ps, p1)
        write_prompt_set(read_prompt_set(p1), p2)
        assert p1.read_bytes() == p2.read_bytes()

    def test_bad_header(self, tmp_path):
        path = tmp_path / "bad.txt"
        path.write_text("#wrong header\n")
        with pytest.raises(prompts.PromptError):
            read_prompt_set(path)


class ScriptedChat:
    """Returns queued responses, then repeats the last one."""

    def __init__(self, responses):
        self.responses = list(responses)
        self.requests = []

    def __call__(self, request):
        self.requests.append(request)
        if len(self.responses) > 1:
            return self.responses.pop(0)
        return self.responses[0]


class TestGenerateDescriptions:
    def policy(self, count=3, retries=2):
        return GenerationPolicy(sentence_count=count, max_retries=retries)

    def test_clean_response_first_try(self):
        chat = ScriptedChat(["1. A.\n2. B.\n3. C."])
        got = generate_category_descriptions("cat", "pets", self.policy(), chat)
        assert got == ["A.", "B.", "C."]
        assert len(chat.requests) == 1

    def test_retry_then_success(self):
        chat = ScriptedChat(["1. A.\n2. B.", "1. A.\n2. B.\n3. C."])
        got = generate_category_descriptions("cat", "pets", self.policy(), chat)
        assert got == ["A.", "B.", "C."]
        assert len(chat.requests) == 2

    def test_truncates_overlong_after_retries(self):
        overlong = "\n".join(f"{i}. S{i}." for i in range(1, 6))
        chat = ScriptedChat([overlong])
        got = generate_category_descriptions("cat", "pets", self.policy(3, retries=1), chat)
        assert got == ["S1.", "S2.", "S3."]
        assert len(chat.requests) == 2  # initial + one retry, then salvage

    def test_tops_up_short_response(self):
        chat = ScriptedChat(["1. A.\n2. B.", "1. A.\n2. B.", "1. A.\n2. B.", "1. C."])
        # policy retries twice, then a top-up request for the single missing line
        chat.responses = ["1. A.\n2. B.", "1. A.\n2. B.", "1. A.\n2. B.", "1. C."]
        got = generate_category_descriptions("cat", "pets", self.policy(3, retries=2), chat)
        assert got == ["A.", "B.", "C."]
        final_request = chat.requests[-1]["messages"][0]["content"]
        assert "exactly 1 numbered" in final_request
