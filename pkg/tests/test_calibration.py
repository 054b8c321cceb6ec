"""Null calibration, rank p-values, thresholds, and decision plumbing."""

import hashlib

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from statguard.backends import IntTokenizer, ToyLM, ToyProvider, sample_sequences
from statguard.calibration import (
    CalibrationStore,
    Decision,
    Detector,
    NullDistribution,
    calibrate,
    detect,
    general_p,
    load_null,
    p_value,
    save_null,
    statistic_for_text,
    threshold,
)
from statguard.corpus import GENERAL, Domain, Origin, TextSample
from statguard.errors import (
    AlphaUnattainable,
    EmptyCorpus,
    FingerprintMismatch,
    MixedOrigin,
    UncalibratedDomain,
)
from statguard.witness import identity_witness, witness_to_json

V, T = 6, 28
FP = "a" * 40


def shifted_lm(shift, boost=3.0):
    logits = np.zeros((V, V))
    for prev in range(V):
        logits[prev, (prev + shift) % V] = boost
    return ToyLM(vocab_size=V, order=2, logits=logits)


HUMAN_LM = shifted_lm(3)
LLM_LM = shifted_lm(1)
PROVIDER = ToyProvider(LLM_LM, IntTokenizer(V))
DETECTOR = Detector(identity_witness(), PROVIDER.provider_id)


def corpus(model, n, seed, domain, origin=Origin.HUMAN):
    seqs = sample_sequences(model, n, T, np.random.default_rng(seed))
    return [
        TextSample(
            id=f"{domain.value}-{i}",
            text="",
            domain=domain,
            origin=origin,
            tokens=[int(t) for t in seqs[i]],
        )
        for i in range(n)
    ]


def null_of(stats, domain=Domain.NEWS, fp=FP):
    return NullDistribution(domain, np.sort(np.asarray(stats, float)), fp, 0.0)


def full_store(tmp_path, n=30, detector=DETECTOR):
    store = CalibrationStore(tmp_path / "store")
    for i, domain in enumerate(Domain):
        human = corpus(HUMAN_LM, n, 100 + i, domain)
        store.save(calibrate(human, detector, PROVIDER, domain))
    return store


# ── detector identity ─────────────────────────────────────────────────────

class TestDetector:
    def test_fingerprint_formula(self):
        det = Detector(identity_witness(), "toy:abc")
        payload = witness_to_json(identity_witness()) + "|toy:abc"
        assert det.fingerprint == hashlib.sha1(payload.encode()).hexdigest()

    def test_fingerprint_sensitivity(self):
        a = Detector(identity_witness(), "toy:abc")
        b = Detector(identity_witness(), "toy:abd")
        assert a.fingerprint != b.fingerprint


# ── null construction ─────────────────────────────────────────────────────

class TestNullDistribution:
    def test_validation(self):
        with pytest.raises(ValueError):
            null_of([])
        with pytest.raises(ValueError):
            NullDistribution(Domain.NEWS, np.array([2.0, 1.0]), FP, 0.0)
        with pytest.raises(ValueError):
            NullDistribution(Domain.NEWS, np.array([1.0]), "", 0.0)

    def test_p_floor(self):
        assert null_of([1.0, 2.0, 3.0]).p_floor == 0.25


class TestCalibrate:
    def test_sorts_statistics(self):
        human = corpus(HUMAN_LM, 3, 0, Domain.NEWS)
        null = calibrate(human, DETECTOR, PROVIDER, Domain.NEWS)
        assert null.m == 3
        assert np.all(np.diff(null.stats) >= 0)
        assert null.detector_fingerprint == DETECTOR.fingerprint

    def test_deterministic(self):
        human = corpus(HUMAN_LM, 12, 1, Domain.NEWS)
        a = calibrate(human, DETECTOR, PROVIDER, Domain.NEWS)
        b = calibrate(human, DETECTOR, PROVIDER, Domain.NEWS)
        assert np.array_equal(a.stats, b.stats)

    def test_empty_corpus(self):
        with pytest.raises(EmptyCorpus):
            calibrate([], DETECTOR, PROVIDER, Domain.NEWS)

    def test_mixed_origin(self):
        bad = corpus(HUMAN_LM, 3, 2, Domain.NEWS, origin=Origin.LLM)
        with pytest.raises(MixedOrigin):
            calibrate(bad, DETECTOR, PROVIDER, Domain.NEWS)

    def test_wrong_domain(self):
        human = corpus(HUMAN_LM, 3, 3, Domain.FINANCE)
        with pytest.raises(ValueError):
            calibrate(human, DETECTOR, PROVIDER, Domain.NEWS)

    def test_general_not_calibratable(self):
        with pytest.raises(ValueError):
            calibrate(corpus(HUMAN_LM, 3, 4, Domain.NEWS), DETECTOR, PROVIDER, GENERAL)


# ── p-values and thresholds ───────────────────────────────────────────────

class TestPValue:
    NULL = null_of([-1.0, 0.0, 2.0])

    def test_examples(self):
        assert p_value(1.0, self.NULL) == 0.5
        assert p_value(5.0, self.NULL) == 0.25
        assert p_value(-5.0, self.NULL) == 1.0

    def test_tie_counts_as_non_exceedance(self):
        assert p_value(2.0, self.NULL) == 0.25

    @given(
        st.lists(st.floats(-100, 100), min_size=1, max_size=40),
        st.floats(-150, 150),
    )
    @settings(max_examples=80, deadline=None)
    def test_range_is_rank_grid(self, stats, S):
        null = null_of(stats)
        p = p_value(S, null)
        k = round(p * (null.m + 1))
        assert 1 <= k <= null.m + 1
        assert p == k / (null.m + 1)

    @given(st.lists(st.floats(-50, 50), min_size=2, max_size=25))
    @settings(max_examples=40, deadline=None)
    def test_monotone_in_S(self, stats):
        null = null_of(stats)
        grid = np.linspace(-60, 60, 30)
        ps = [p_value(float(s), null) for s in grid]
        assert all(a >= b for a, b in zip(ps, ps[1:]))

    def test_super_uniformity_by_resampling(self):
        rng = np.random.default_rng(11)
        null = null_of(rng.normal(size=199))
        fresh = rng.normal(size=4000)
        for alpha in (0.01, 0.05, 0.1):
            fpr = np.mean([p_value(s, null) <= alpha for s in fresh])
            slack = 2 / 200 + 3 * np.sqrt(alpha * (1 - alpha) / 4000)
            assert fpr <= alpha + slack


class TestThreshold:
    def test_m19_alpha05_is_max(self):
        stats = np.arange(19, dtype=float)
        assert threshold(null_of(stats), 0.05) == 18.0

    def test_m3_alpha01_unattainable(self):
        with pytest.raises(AlphaUnattainable):
            threshold(null_of([0.0, 1.0, 2.0]), 0.01)

    def test_m99_alpha05_fifth_largest(self):
        stats = np.arange(99, dtype=float)
        assert threshold(null_of(stats), 0.05) == 94.0

    def test_bad_alpha(self):
        with pytest.raises(ValueError):
            threshold(null_of([1.0]), 1.5)

    @pytest.mark.parametrize("alpha", [0.01, 0.05, 0.11, 0.3])
    def test_equivalence_with_p_value_across_gaps(self, alpha):
        rng = np.random.default_rng(7)
        null = null_of(rng.normal(size=99))
        c = threshold(null, alpha)
        probes = np.concatenate([
            [null.stats[0] - 1.0, null.stats[-1] + 1.0],
            (null.stats[:-1] + null.stats[1:]) / 2,
        ])
        for S in probes:
            assert (p_value(float(S), null) <= alpha) == (S > c)


# ── decisions ─────────────────────────────────────────────────────────────

class TestDetect:
    def test_llm_text_rejected_human_text_not(self, tmp_path):
        store = full_store(tmp_path, n=60)
        llm_text = corpus(LLM_LM, 1, 7, Domain.NEWS, Origin.LLM)[0]
        human_text = corpus(HUMAN_LM, 1, 8, Domain.NEWS)[0]
        hit = detect("", Domain.NEWS, 0.05, DETECTOR, PROVIDER, store, tokens=llm_text.tokens)
        miss = detect("", Domain.NEWS, 0.05, DETECTOR, PROVIDER, store, tokens=human_text.tokens)
        assert hit.reject and hit.p_value <= 0.05
        assert not miss.reject
        assert hit.domain_used == Domain.NEWS

    def test_reject_monotone_in_alpha(self, tmp_path):
        store = full_store(tmp_path, n=40)
        text = corpus(LLM_LM, 1, 9, Domain.NEWS, Origin.LLM)[0]
        flags = [
            detect("", Domain.NEWS, a, DETECTOR, PROVIDER, store, tokens=text.tokens).reject
            for a in (0.02, 0.05, 0.1, 0.2, 0.4)
        ]
        assert flags == sorted(flags)

    def test_uncalibrated_domain(self, tmp_path):
        store = CalibrationStore(tmp_path / "store")
        with pytest.raises(UncalibratedDomain):
            detect("", Domain.NEWS, 0.05, DETECTOR, PROVIDER, store, tokens=[0, 1, 2])

    def test_stale_fingerprint(self, tmp_path):
        store = full_store(tmp_path, n=10)
        other = Detector(identity_witness(), "toy:somethingelse")
        with pytest.raises(FingerprintMismatch):
            detect("", Domain.NEWS, 0.05, other, PROVIDER, store, tokens=[0, 1, 2, 3])

    def test_alpha_below_resolution_never_rejects(self, tmp_path):
        store = CalibrationStore(tmp_path / "store")
        human = corpus(HUMAN_LM, 3, 10, Domain.NEWS)
        store.save(calibrate(human, DETECTOR, PROVIDER, Domain.NEWS))
        text = corpus(LLM_LM, 1, 11, Domain.NEWS, Origin.LLM)[0]
        decision = detect("", Domain.NEWS, 0.01, DETECTOR, PROVIDER, store, tokens=text.tokens)
        assert decision.threshold == float("inf")
        assert not decision.reject

    def test_invariant_guard(self):
        with pytest.raises(AssertionError):
            Decision(0.0, 0.5, {}, 0.05, True, Domain.NEWS, 1.0)


class TestGeneralRule:
    def test_missing_domains_listed(self, tmp_path):
        store = CalibrationStore(tmp_path / "store")
        human = corpus(HUMAN_LM, 5, 12, Domain.NEWS)
        store.save(calibrate(human, DETECTOR, PROVIDER, Domain.NEWS))
        with pytest.raises(UncalibratedDomain) as err:
            general_p("", DETECTOR, PROVIDER, store, tokens=[0, 1, 2])
        assert Domain.FINANCE in err.value.missing

    def test_max_over_constructed_nulls(self, tmp_path):
        text = corpus(LLM_LM, 1, 13, Domain.NEWS, Origin.LLM)[0]
        S = statistic_for_text(DETECTOR, PROVIDER, "", text.tokens)
        store = CalibrationStore(tmp_path / "store")
        fp = DETECTOR.fingerprint
        for domain in Domain:
            if domain == Domain.FINANCE:
                stats = [S - 1.0] * 35 + [S + 1.0] * 14  # p = 15/50 = 0.30
            else:
                stats = [S - 1.0] * 49  # p = 1/50 = 0.02
            store.save(null_of(stats, domain, fp))
        p, per_domain = general_p("", DETECTOR, PROVIDER, store, tokens=text.tokens)
        assert p == pytest.approx(0.30)
        assert per_domain[Domain.FINANCE] == pytest.approx(0.30)
        assert per_domain[Domain.NEWS] == pytest.approx(0.02)

    def test_general_never_more_aggressive(self, tmp_path):
        store = full_store(tmp_path, n=25)
        text = corpus(LLM_LM, 1, 14, Domain.NEWS, Origin.LLM)[0]
        decision = detect("", GENERAL, 0.1, DETECTOR, PROVIDER, store, tokens=text.tokens)
        assert decision.domain_used == GENERAL
        assert decision.p_value == max(decision.per_domain_p.values())
        for domain in Domain:
            single = detect("", domain, 0.1, DETECTOR, PROVIDER, store, tokens=text.tokens)
            assert decision.p_value >= single.p_value

    def test_identical_nulls_match_single_domain(self, tmp_path):
        store = CalibrationStore(tmp_path / "store")
        stats = np.linspace(-2, 2, 19)
        for domain in Domain:
            store.save(null_of(stats, domain, DETECTOR.fingerprint))
        text = corpus(LLM_LM, 1, 15, Domain.NEWS, Origin.LLM)[0]
        g = detect("", GENERAL, 0.1, DETECTOR, PROVIDER, store, tokens=text.tokens)
        s = detect("", Domain.NEWS, 0.1, DETECTOR, PROVIDER, store, tokens=text.tokens)
        assert g.p_value == s.p_value
        assert g.threshold == s.threshold


# ── artifact files ────────────────────────────────────────────────────────

class TestArtifacts:
    def test_bit_exact_roundtrip(self, tmp_path):
        rng = np.random.default_rng(3)
        null = null_of(rng.normal(size=257), Domain.MEDICINE)
        path = tmp_path / "null.sgnd"
        save_null(path, null)
        first = path.read_bytes()
        back = load_null(path)
        assert np.array_equal(back.stats, null.stats)
        assert back.domain == Domain.MEDICINE
        assert back.detector_fingerprint == null.detector_fingerprint
        assert back.created_at == null.created_at
        save_null(path, back)
        assert path.read_bytes() == first

    def test_no_tmp_residue(self, tmp_path):
        path = tmp_path / "null.sgnd"
        save_null(path, null_of([1.0, 2.0]))
        assert [p.name for p in tmp_path.iterdir()] == ["null.sgnd"]

    def test_bad_magic(self, tmp_path):
        path = tmp_path / "bad.sgnd"
        path.write_bytes(b"NOPE" + b"\x00" * 16)
        with pytest.raises(ValueError):
            load_null(path)

    def test_truncated(self, tmp_path):
        path = tmp_path / "null.sgnd"
        save_null(path, null_of(np.arange(50, dtype=float)))
        raw = path.read_bytes()
        path.write_bytes(raw[:-8])
        with pytest.raises(ValueError):
            load_null(path)

    def test_store_listing(self, tmp_path):
        store = CalibrationStore(tmp_path / "store")
        assert store.domains() == []
        store.save(null_of([1.0], Domain.NEWS))
        store.save(null_of([1.0], Domain.ACADEMIA))
        assert store.domains() == [Domain.ACADEMIA, Domain.NEWS]
        assert store.has(Domain.NEWS) and not store.has(Domain.FINANCE)
        with pytest.raises(UncalibratedDomain):
            store.get(Domain.FINANCE)
