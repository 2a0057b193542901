import numpy as np
import pytest
from scipy.stats import chisquare

from app.core.conversation import (
    AttentionMaskKind,
    ConversationExample,
    CorpusClass,
    Role,
    Tag,
    Turn,
    apply_tag_policy,
    build_attention_mask,
    corrupt_responses,
    example_from_layout,
    layout,
    mask_response_pattern,
    open_response_layout,
    read_jsonl,
    write_jsonl,
)
from app.core.errors import ConfigurationError, ValidationError
from app.engine.oracle import enumerate_forward
from app.core.vocab import MASK_TOKEN, Vocabulary


class TestLayout:

    def test_roles_and_turns(self, image_example):
        lay = layout(image_example)
        assert lay.role_string == "IIIIPRRRPPR"
        np.testing.assert_array_equal(lay.turns, [0] * 8 + [1] * 3)
        np.testing.assert_array_equal(lay.tokens[:4], [0, 1, 2, 3])
        np.testing.assert_array_equal(lay.response_positions, [5, 6, 7, 10])

    def test_positions_by_turn(self, image_example):
        lay = layout(image_example)
        np.testing.assert_array_equal(lay.positions(Role.PROMPT, 1), [8, 9])

    def test_rebuilds_example(self, image_example):
        assert example_from_layout(layout(image_example)) == image_example

    def test_masked_layout_cannot_be_rebuilt(self, image_example):
        lay = mask_response_pattern(layout(image_example), 0b1)
        with pytest.raises(ValidationError):
            example_from_layout(lay)

    @pytest.mark.parametrize("turns", [
        (),
        (Turn((), (1,)),),
        (Turn((1,), ()), Turn((2,), (3,))),
    ])
    def test_invalid_examples(self, turns):
        with pytest.raises(ValidationError):
            layout(ConversationExample(turns=turns))

    def test_open_response(self):
        history = ConversationExample(turns=(Turn((4,), (1, 2)), Turn((5,))))
        lay = open_response_layout(history, 3)
        assert lay.role_string == "PRRPRRR"
        np.testing.assert_array_equal(lay.tokens[-3:], [MASK_TOKEN] * 3)
        np.testing.assert_array_equal(lay.turns[-3:], [1, 1, 1])
        assert lay.noise_level == 1.0

    def test_open_response_needs_trailing_prompt(self):
        with pytest.raises(ValidationError):
            open_response_layout(ConversationExample(turns=(Turn((4,), (1,)),)), 2)


class TestCorruption:

    def test_only_responses_are_masked(self, image_example, rng):
        lay = layout(image_example)
        for t in (0.3, 0.7, 1.0):
            corrupted = corrupt_responses(lay, t, rng)
            other = lay.roles != Role.RESPONSE
            np.testing.assert_array_equal(corrupted.tokens[other], lay.tokens[other])
            assert corrupted.noise_level == t
        full = corrupt_responses(lay, 1.0, rng)
        np.testing.assert_array_equal(full.masked_positions, lay.response_positions)
        assert corrupt_responses(lay, 0.0, rng).masked_positions.size == 0

    def test_pattern_bits(self, image_example):
        lay = mask_response_pattern(layout(image_example), 0b1010)
        np.testing.assert_array_equal(lay.masked_positions, [6, 10])

    def test_pattern_law_matches_enumeration(self, rng):
        lay = layout(ConversationExample(turns=(Turn((1,), (2, 3)), Turn((4,), (5, 6)))))
        weights = 1 << np.arange(4)
        draws = 20_000
        counts = np.zeros(16)
        for _ in range(draws):
            masked = corrupt_responses(lay, 0.5, rng).tokens[lay.response_positions] == MASK_TOKEN
            counts[int(weights[masked].sum())] += 1
        _, p_value = chisquare(counts, enumerate_forward(4, 0.5).probs * draws)
        assert p_value > 1e-3


class TestAttentionMask:

    def test_causal_is_lower_triangular(self, image_example):
        m = build_attention_mask(layout(image_example), AttentionMaskKind.CAUSAL)
        np.testing.assert_array_equal(m, np.tril(np.ones_like(m)))

    def test_dialogue_causal_blocks_later_turns(self, image_example):
        lay = layout(image_example)
        m = build_attention_mask(lay, AttentionMaskKind.DIALOGUE_CAUSAL)
        first, second = lay.turns == 0, lay.turns == 1
        assert m[np.ix_(first, first)].all()
        assert not m[np.ix_(first, second)].any()
        assert m[np.ix_(second, first)].all()
        assert m[np.ix_(second, second)].all()

    def test_single_turn_matches_no_mask(self, image_example):
        single = ConversationExample(turns=image_example.turns[:1], image=image_example.image)
        lay = layout(single)
        np.testing.assert_array_equal(
            build_attention_mask(lay, AttentionMaskKind.DIALOGUE_CAUSAL),
            build_attention_mask(lay, AttentionMaskKind.NO_MASK),
        )


class TestTagPolicy:

    def examples(self):
        return [ConversationExample(turns=(Turn((1,), (2,)), Turn((3,), (4,)))) for _ in range(4)]

    def test_direct_appends_no_think(self, rng):
        vocab = Vocabulary(10)
        tagged = apply_tag_policy(self.examples(), CorpusClass.DIRECT, rng, vocab)
        for ex in tagged:
            assert ex.tag is Tag.NO_THINK
            assert all(turn.prompt[-1] == vocab.no_think_id for turn in ex.turns)

    @pytest.mark.parametrize("rate, tag", [(1.0, Tag.THINK), (0.0, Tag.NONE)])
    def test_reasoning_rate(self, rng, rate, tag):
        vocab = Vocabulary(10)
        tagged = apply_tag_policy(self.examples(), CorpusClass.REASONING, rng, vocab, think_rate=rate)
        assert all(ex.tag is tag and ex.corpus_class is CorpusClass.REASONING for ex in tagged)
        if tag is Tag.NONE:
            assert tagged[0].turns == self.examples()[0].turns
        else:
            assert tagged[0].turns[1].prompt == (3, vocab.think_id)

    def test_needs_tag_tokens(self, rng):
        with pytest.raises(ConfigurationError):
            apply_tag_policy(self.examples(), CorpusClass.DIRECT, rng, Vocabulary(10, with_tags=False))

    def test_think_fraction_within_binomial_bounds(self, rng):
        vocab = Vocabulary(10)
        n, rate = 10_000, 0.3
        corpus = [ConversationExample(turns=(Turn((1,), (2,)),)) for _ in range(n)]
        tagged = apply_tag_policy(corpus, CorpusClass.REASONING, rng, vocab, think_rate=rate)
        thinking = [ex for ex in tagged if ex.tag is Tag.THINK]
        assert abs(len(thinking) - n * rate) <= 4 * np.sqrt(n * rate * (1 - rate))
        assert all(ex.turns[0].prompt == (1, vocab.think_id) for ex in thinking)
        assert all(ex.tag in (Tag.THINK, Tag.NONE) for ex in tagged)

    def test_empty_corpus_needs_no_tag_tokens(self, rng):
        assert apply_tag_policy([], CorpusClass.DIRECT, rng, Vocabulary(10, with_tags=False)) == []

    def test_rejects_double_tagging(self, rng):
        vocab = Vocabulary(10)
        tagged = apply_tag_policy(self.examples(), CorpusClass.DIRECT, rng, vocab)
        with pytest.raises(ConfigurationError):
            apply_tag_policy(tagged, CorpusClass.DIRECT, rng, vocab)


class TestJsonl:

    def test_written_files_are_stable(self, tmp_path, image_example):
        examples = [image_example, ConversationExample(turns=(Turn((1,), (2,)),), tag=Tag.NONE)]
        write_jsonl(tmp_path / "a.jsonl", examples)
        write_jsonl(tmp_path / "b.jsonl", examples)
        assert (tmp_path / "a.jsonl").read_bytes() == (tmp_path / "b.jsonl").read_bytes()
        assert read_jsonl(tmp_path / "a.jsonl") == examples

    def test_malformed_line(self, tmp_path):
        path = tmp_path / "bad.jsonl"
        path.write_text('{"turns": [{"prompt": [1]}]}\n', encoding="utf-8")
        with pytest.raises(ValidationError):
            read_jsonl(path)


def test_vocabulary_layout():
    vocab = Vocabulary(10)
    assert (vocab.eos_id, vocab.mask_id, vocab.pad_id, vocab.think_id, vocab.no_think_id) == (10, 11, 12, 13, 14)
    assert vocab.output_size == 11
    assert vocab.embedding_size == 15
    assert Vocabulary(10, with_tags=False).embedding_size == 13
