"""Edit distance, channel likelihood, and EM against brute-force oracles."""

from functools import lru_cache

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from emgtype.charset import default_charset, default_fingermap
from emgtype.errmodel import (
    ChannelModel,
    char_accuracy,
    corpus_accuracy,
    edit_distance,
    em_fit,
    expected_counts,
    finger_confusion,
    fit_paper_style,
    load_channel_model,
    pair_log_likelihood,
    save_channel_model,
    uniform_diagonal_init,
)


# ---------------------------------------------------------------------------
# Oracles


def oracle_distance(a, b):
    """Plain recursive Levenshtein definition (memoized, no table)."""

    @lru_cache(maxsize=None)
    def d(i, j):
        if i == 0:
            return j
        if j == 0:
            return i
        return min(
            d(i - 1, j - 1) + (a[i - 1] != b[j - 1]),
            d(i - 1, j) + 1,
            d(i, j - 1) + 1,
        )

    return d(len(a), len(b))


def brute_pair_probability(m: ChannelModel, source: str, observed: str) -> float:
    """Linear-space sum over every generation history, by raw recursion."""
    idx = m.index
    P = m.P_ins

    def gen(i, j):
        total = 0.0
        if j < len(observed):
            total += P * m.p_ins[idx[observed[j]]] * gen(i, j + 1)
        if i < len(source):
            s = idx[source[i]]
            total += (1 - P) * m.p_del[s] * gen(i + 1, j)
            if j < len(observed):
                total += (1 - P) * m.p_sub[s, idx[observed[j]]] * gen(i + 1, j + 1)
        elif j == len(observed):
            total += 1 - P
        return total

    return gen(0, 0)


def brute_expected_counts(m: ChannelModel, source: str, observed: str):
    """Posterior operation counts via explicit history enumeration."""
    idx = m.index
    P = m.P_ins
    k = len(m.alphabet)
    histories = []  # (prob, sub counts, del counts, ins counts)

    def gen(i, j, prob, sub, dele, ins):
        if prob == 0.0:
            return
        if j < len(observed):
            o = idx[observed[j]]
            ins2 = ins.copy()
            ins2[o] += 1
            gen(i, j + 1, prob * P * m.p_ins[o], sub, dele, ins2)
        if i < len(source):
            s = idx[source[i]]
            dele2 = dele.copy()
            dele2[s] += 1
            gen(i + 1, j, prob * (1 - P) * m.p_del[s], sub, dele2, ins)
            if j < len(observed):
                o = idx[observed[j]]
                sub2 = sub.copy()
                sub2[s, o] += 1
                gen(i + 1, j + 1, prob * (1 - P) * m.p_sub[s, o], sub2, dele, ins)
        elif j == len(observed):
            histories.append((prob * (1 - P), sub, dele, ins))

    gen(0, 0, 1.0, np.zeros((k, k)), np.zeros(k), np.zeros(k))
    total = sum(h[0] for h in histories)
    e_sub = sum(p * s for p, s, _, _ in histories) / total
    e_del = sum(p * d for p, _, d, _ in histories) / total
    e_ins = sum(p * i for p, _, _, i in histories) / total
    return e_sub, e_del, e_ins, total


def random_model(rng, alphabet=("a", "b", "c")) -> ChannelModel:
    k = len(alphabet)
    rows = rng.dirichlet(np.ones(k + 1), size=k)
    return ChannelModel(
        alphabet=tuple(alphabet),
        p_del=rows[:, 0].copy(),
        P_ins=float(rng.uniform(0.0, 0.3)),
        p_ins=rng.dirichlet(np.ones(k)),
        p_sub=rows[:, 1:].copy(),
    )


def sample_through_channel(m: ChannelModel, source: str, rng) -> str:
    k = len(m.alphabet)
    out = []
    for i in range(len(source) + 1):
        while rng.random() < m.P_ins:
            out.append(m.alphabet[rng.choice(k, p=m.p_ins)])
        if i < len(source):
            s = m.index[source[i]]
            row = np.concatenate([[m.p_del[s]], m.p_sub[s]])
            choice = rng.choice(k + 1, p=row / row.sum())
            if choice > 0:
                out.append(m.alphabet[choice - 1])
    return "".join(out)


# ---------------------------------------------------------------------------
# Edit distance


class TestEditDistance:
    def test_identical(self):
        d, ops = edit_distance("abc", "abc")
        assert d == 0
        assert all(op == "match" for op, _, _ in ops)

    def test_empty_vs_full(self):
        assert edit_distance("", "abc")[0] == 3
        assert edit_distance("abc", "")[0] == 3

    def test_kitten_sitting(self):
        d, _ = edit_distance("kitten", "sitting")
        assert d == 3
        assert oracle_distance("kitten", "sitting") == 3

    @settings(max_examples=200, deadline=None)
    @given(
        a=st.text(alphabet="abc", max_size=6),
        b=st.text(alphabet="abc", max_size=6),
    )
    def test_matches_recursive_oracle(self, a, b):
        assert edit_distance(a, b)[0] == oracle_distance(a, b)

    @settings(max_examples=200, deadline=None)
    @given(
        a=st.text(alphabet="abcd", max_size=8),
        b=st.text(alphabet="abcd", max_size=8),
    )
    def test_alignment_replays(self, a, b):
        d, ops = edit_distance(a, b)
        rebuilt = []
        i = 0
        cost = 0
        for op, sa, sb in ops:
            if op in ("match", "sub"):
                assert a[i] == sa
                rebuilt.append(sb)
                i += 1
                cost += op == "sub"
            elif op == "del":
                assert a[i] == sa
                i += 1
                cost += 1
            else:
                rebuilt.append(sb)
                cost += 1
        assert i == len(a)
        assert "".join(rebuilt) == b
        assert cost == d

    @settings(max_examples=200, deadline=None)
    @given(
        a=st.text(alphabet="ab", max_size=7),
        b=st.text(alphabet="ab", max_size=7),
        c=st.text(alphabet="ab", max_size=7),
    )
    def test_metric_properties(self, a, b, c):
        dab = edit_distance(a, b)[0]
        assert dab == edit_distance(b, a)[0]
        assert (dab == 0) == (a == b)
        assert dab <= edit_distance(a, c)[0] + edit_distance(c, b)[0]


class TestAccuracy:
    def test_identical(self):
        assert char_accuracy("hello", "hello") == 1.0

    def test_empty_prediction(self):
        assert char_accuracy("", "0123456789") == 0.0

    def test_one_substitution_in_ten(self):
        assert char_accuracy("012345678x", "0123456789") == pytest.approx(0.9)

    def test_empty_truth(self):
        assert char_accuracy("", "") == 1.0
        with pytest.warns(UserWarning):
            assert char_accuracy("abc", "") == 0.0

    def test_clamped_at_zero(self):
        assert char_accuracy("wxyz", "a") == 0.0

    def test_micro_average(self):
        pairs = [("abc", "abc"), ("axc", "abc"), ("", "ab")]
        # distances 0 + 1 + 2 over 8 truth chars
        assert corpus_accuracy(pairs) == pytest.approx(1 - 3 / 8)


# ---------------------------------------------------------------------------
# Channel likelihood


class TestPairLogLikelihood:
    def direct_model(self):
        return ChannelModel(
            alphabet=("a", "b"),
            p_del=np.array([0.1, 0.2]),
            P_ins=0.0,
            p_ins=np.array([0.5, 0.5]),
            p_sub=np.array([[0.8, 0.1], [0.05, 0.75]]),
        )

    def test_pure_deletion(self):
        m = self.direct_model()
        assert pair_log_likelihood(m, "a", "") == pytest.approx(np.log(0.1))

    def test_pure_substitution(self):
        m = self.direct_model()
        assert pair_log_likelihood(m, "a", "b") == pytest.approx(np.log(0.1))
        assert pair_log_likelihood(m, "a", "a") == pytest.approx(np.log(0.8))

    def test_single_insertion_formula(self):
        m = ChannelModel(
            alphabet=("a", "x"),
            p_del=np.zeros(2),
            P_ins=0.2,
            p_ins=np.array([0.3, 0.7]),
            p_sub=np.eye(2),
        )
        got = pair_log_likelihood(m, "a", "xa")
        expected = 0.2 * 0.7 * (1 - 0.2) * 1.0 * (1 - 0.2)
        assert got == pytest.approx(np.log(expected))

    def test_rejects_unknown_symbol(self):
        m = self.direct_model()
        with pytest.raises(ValueError, match="not in model alphabet"):
            pair_log_likelihood(m, "az", "a")

    @pytest.mark.parametrize("trial", range(60))
    def test_matches_history_enumeration(self, trial):
        rng = np.random.default_rng(2000 + trial)
        m = random_model(rng)
        src = "".join(rng.choice(list(m.alphabet), size=rng.integers(0, 5)))
        obs = "".join(rng.choice(list(m.alphabet), size=rng.integers(0, 5)))
        brute = brute_pair_probability(m, src, obs)
        got = pair_log_likelihood(m, src, obs)
        if brute == 0.0:
            assert got == -np.inf
        else:
            assert got == pytest.approx(np.log(brute), abs=1e-9)


# ---------------------------------------------------------------------------
# EM


class TestEm:
    def test_perfect_identity_pairs(self):
        init = uniform_diagonal_init(("a", "b"))
        model, history = em_fit([("a", "a")] * 50, init, max_iters=200)
        ia = model.index["a"]
        assert model.p_sub[ia, ia] > 0.999
        assert model.p_del[ia] < 1e-6
        assert model.P_ins < 1e-6
        assert history == sorted(history)

    def test_loglik_monotone_and_invariants(self):
        rng = np.random.default_rng(3)
        planted = random_model(rng)
        pairs = []
        for _ in range(300):
            src = "".join(rng.choice(list(planted.alphabet), size=rng.integers(1, 6)))
            pairs.append((src, sample_through_channel(planted, src, rng)))
        init = uniform_diagonal_init(planted.alphabet)

        # re-run the E/M loop manually to check invariants after each M-step
        model = init
        prev = -np.inf
        for _ in range(20):
            counts = expected_counts(model, pairs)
            assert counts.loglik >= prev - 1e-9
            prev = counts.loglik
            model, history = em_fit(pairs, model, max_iters=1)
            model.validate(atol=1e-12)

    def test_planted_model_recovery(self):
        alphabet = ("a", "b", "c")
        planted = ChannelModel(
            alphabet=alphabet,
            p_del=np.array([0.05, 0.03, 0.04]),
            P_ins=0.0136,
            p_ins=np.array([0.5, 0.3, 0.2]),
            p_sub=np.array(
                [[0.83, 0.10, 0.02], [0.05, 0.90, 0.02], [0.02, 0.04, 0.90]]
            ),
        )
        planted.validate()
        rng = np.random.default_rng(42)
        pairs = []
        for _ in range(10_000):
            src = "".join(rng.choice(list(alphabet), size=rng.integers(3, 6)))
            pairs.append((src, sample_through_channel(planted, src, rng)))
        model, history = em_fit(pairs, uniform_diagonal_init(alphabet), max_iters=60, tol=1e-7)
        assert np.abs(model.p_del - planted.p_del).max() < 0.02
        assert np.abs(model.p_sub - planted.p_sub).max() < 0.02
        assert np.abs(model.p_ins - planted.p_ins).max() < 0.02
        assert abs(model.P_ins - planted.P_ins) < 0.02
        assert all(b >= a - 1e-9 for a, b in zip(history, history[1:]))

    def test_expected_counts_match_enumeration(self):
        rng = np.random.default_rng(5)
        m = random_model(rng, alphabet=("a", "b"))
        for src, obs in [("a", "b"), ("ab", "a"), ("b", "ba"), ("aa", "aa")]:
            e_sub, e_del, e_ins, total = brute_expected_counts(m, src, obs)
            counts = expected_counts(m, [(src, obs)])
            assert np.allclose(counts.sub, e_sub, atol=1e-9)
            assert np.allclose(counts.dele, e_del, atol=1e-9)
            assert np.allclose(counts.ins, e_ins, atol=1e-9)
            assert counts.loglik == pytest.approx(np.log(total), abs=1e-9)
            assert counts.exits == len(src) + 1

    def test_zero_support_raises(self):
        init = ChannelModel(
            alphabet=("a", "b"),
            p_del=np.array([0.0, 0.0]),
            P_ins=0.0,
            p_ins=np.array([0.5, 0.5]),
            p_sub=np.eye(2),
        )
        with pytest.raises(ValueError, match="init support too small"):
            em_fit([("a", "b")], init)

    def test_empty_pairs_rejected(self):
        with pytest.raises(ValueError):
            em_fit([], uniform_diagonal_init(("a", "b")))


class TestFitPaperStyle:
    def test_perfect_predictions_near_identity(self, charset):
        rng = np.random.default_rng(6)
        texts = [
            "".join(rng.choice(list(charset.chars[:26]), size=20)) for _ in range(30)
        ]
        model, _ = fit_paper_style([(t, t) for t in texts], charset)
        diag = np.diag(model.p_sub)
        used = sorted({c for t in texts for c in t})
        for c in used:
            assert diag[model.index[c]] > 0.99
        model.validate(atol=1e-9)


class TestFingerConfusion:
    def test_identity_channel(self, charset, fingermap):
        k = len(charset.chars)
        m = ChannelModel(
            alphabet=charset.chars,
            p_del=np.zeros(k),
            P_ins=0.0,
            p_ins=np.full(k, 1 / k),
            p_sub=np.eye(k),
        )
        fsub, fdel, fingers = finger_confusion(m, fingermap, charset)
        assert np.allclose(fsub, np.eye(len(fingers)))
        assert np.allclose(fdel, 0.0)

    def test_rows_sum_to_one(self, charset, fingermap):
        rng = np.random.default_rng(7)
        k = len(charset.chars)
        rows = rng.dirichlet(np.ones(k + 1), size=k)
        m = ChannelModel(
            alphabet=charset.chars,
            p_del=rows[:, 0].copy(),
            P_ins=0.01,
            p_ins=rng.dirichlet(np.ones(k)),
            p_sub=rows[:, 1:].copy(),
        )
        fsub, fdel, _ = finger_confusion(m, fingermap, charset)
        assert np.allclose(fsub.sum(axis=1) + fdel, 1.0, atol=1e-9)

    def test_two_char_hand_computation(self, charset, fingermap):
        # 'a' is left pinkie, 's' is left ring; one key per finger here, so
        # the aggregation weights are 1 and entries copy straight through
        m = ChannelModel(
            alphabet=("a", "s"),
            p_del=np.array([0.1, 0.2]),
            P_ins=0.0,
            p_ins=np.array([0.5, 0.5]),
            p_sub=np.array([[0.7, 0.2], [0.05, 0.75]]),
        )
        fsub, fdel, fingers = finger_confusion(m, fingermap, charset)
        i_l5 = fingers.index("L5")
        i_l4 = fingers.index("L4")
        assert fsub[i_l5, i_l5] == pytest.approx(0.7)
        assert fsub[i_l5, i_l4] == pytest.approx(0.2)
        assert fsub[i_l4, i_l5] == pytest.approx(0.05)
        assert fdel[i_l5] == pytest.approx(0.1)

    def test_unmapped_char_rejected(self, charset, fingermap):
        m = ChannelModel(
            alphabet=("a", "?"),
            p_del=np.zeros(2),
            P_ins=0.0,
            p_ins=np.array([0.5, 0.5]),
            p_sub=np.eye(2),
        )
        with pytest.raises(ValueError, match="finger"):
            finger_confusion(m, fingermap, charset)


class TestChannelModelSerialization:
    def test_csv_round_trip(self, tmp_path, charset):
        rng = np.random.default_rng(8)
        k = len(charset.chars)
        rows = rng.dirichlet(np.ones(k + 1), size=k)
        m = ChannelModel(
            alphabet=charset.chars,
            p_del=rows[:, 0].copy(),
            P_ins=0.0136,
            p_ins=rng.dirichlet(np.ones(k)),
            p_sub=rows[:, 1:].copy(),
        )
        save_channel_model(m, tmp_path / "cm")
        back = load_channel_model(tmp_path / "cm")
        assert back.alphabet == m.alphabet
        assert np.array_equal(back.p_del, m.p_del)
        assert np.array_equal(back.p_ins, m.p_ins)
        assert np.array_equal(back.p_sub, m.p_sub)
        assert back.P_ins == m.P_ins

    def test_validate_catches_bad_rows(self):
        with pytest.raises(ValueError, match="sum_y"):
            ChannelModel(
                alphabet=("a",),
                p_del=np.array([0.5]),
                P_ins=0.0,
                p_ins=np.array([1.0]),
                p_sub=np.array([[0.9]]),
            ).validate()
