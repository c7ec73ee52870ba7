import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from bayescnn.errors import InputError
from bayescnn.network import BayesianNetwork, mlp_spec
from bayescnn.uncertainty import (
    PredictiveSampleSet,
    UncertaintyRecord,
    aleatoric,
    epistemic,
    normalize_epistemic,
    predictive_samples,
    predictive_samples_batch,
    read_records,
    write_records,
)


def random_simplex(rng, n, k=2):
    return rng.dirichlet(np.ones(k), size=n)


def loop_aleatoric(p):
    out = np.zeros((p.shape[1], p.shape[1]))
    for row in p:
        out += np.diag(row) - np.outer(row, row)
    return out / len(p)


def loop_epistemic(p):
    mean = p.sum(axis=0) / len(p)
    out = np.zeros((p.shape[1], p.shape[1]))
    for row in p:
        out += np.outer(row - mean, row - mean)
    return out / len(p)


def small_model(seed=0):
    return BayesianNetwork(mlp_spec(4, (6,), adaptive=True), rng=np.random.default_rng(seed))


class TestPredictiveSamples:
    def test_single_sample_mean(self):
        s = predictive_samples(small_model(), np.ones(4), 1, np.random.default_rng(0))
        assert s.n == 1
        np.testing.assert_array_equal(s.mean, s.samples[0])

    def test_zero_noise_samples_identical(self):
        s = predictive_samples(small_model(), np.ones(4), 7, None)
        assert np.all(s.samples == s.samples[0])

    def test_reproducible_mean(self):
        x = np.linspace(-1, 1, 4)
        a = predictive_samples(small_model(), x, 50, np.random.default_rng(3)).mean
        b = predictive_samples(small_model(), x, 50, np.random.default_rng(3)).mean
        assert a.tobytes() == b.tobytes()

    def test_samples_vary_with_noise(self):
        s = predictive_samples(small_model(), np.ones(4), 5, np.random.default_rng(0))
        assert np.ptp(s.samples[:, 0]) > 0

    def test_batch_shape(self):
        x = np.random.default_rng(0).normal(size=(5, 4))
        out = predictive_samples_batch(small_model(), x, 3, np.random.default_rng(0), batch_size=2)
        assert out.shape == (5, 3, 2)
        np.testing.assert_allclose(out.sum(axis=2), 1.0, atol=1e-12)

    def test_rejects_zero(self):
        with pytest.raises(InputError):
            predictive_samples(small_model(), np.ones(4), 0, None)

    def test_rejects_non_probability(self):
        with pytest.raises(InputError):
            PredictiveSampleSet(np.array([[0.7, 0.7]]))
        with pytest.raises(InputError):
            PredictiveSampleSet(np.zeros((0, 2)))


class TestAleatoric:
    def test_degenerate(self):
        np.testing.assert_array_equal(aleatoric(PredictiveSampleSet([[1.0, 0.0]])), np.zeros((2, 2)))

    def test_half(self):
        np.testing.assert_allclose(
            aleatoric(PredictiveSampleSet([[0.5, 0.5]])), [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15
        )

    def test_loop_oracle(self, rng):
        p = random_simplex(rng, 100, 3)
        np.testing.assert_allclose(aleatoric(PredictiveSampleSet(p)), loop_aleatoric(p), rtol=0, atol=1e-12)


class TestEpistemic:
    def test_single_sample(self):
        np.testing.assert_array_equal(epistemic(PredictiveSampleSet([[0.3, 0.7]])), np.zeros((2, 2)))

    def test_two_sample_case(self):
        np.testing.assert_allclose(
            epistemic(PredictiveSampleSet([[1.0, 0.0], [0.0, 1.0]])), [[0.25, -0.25], [-0.25, 0.25]], atol=1e-15
        )

    def test_loop_oracle(self, rng):
        p = random_simplex(rng, 100)
        np.testing.assert_allclose(epistemic(PredictiveSampleSet(p)), loop_epistemic(p), rtol=0, atol=1e-12)


@settings(max_examples=100, deadline=None)
@given(n=st.integers(1, 40), k=st.integers(2, 4), seed=st.integers(0, 2**31))
def test_decomposition_identity(n, k, seed):
    p = random_simplex(np.random.default_rng(seed), n, k)
    s = PredictiveSampleSet(p)
    a, e = aleatoric(s), epistemic(s)
    total = np.diag(s.mean) - np.outer(s.mean, s.mean)
    np.testing.assert_allclose(a + e, total, atol=1e-12)
    for m in (a, e):
        np.testing.assert_allclose(m, m.T, atol=1e-15)
        assert np.linalg.eigvalsh(m).min() >= -1e-12


class TestNormalize:
    def make(self, values):
        return [
            UncertaintyRecord(str(i), 0, 0, np.empty((0, 0)), np.empty((0, 0)), 0.0, v) for i, v in enumerate(values)
        ]

    def test_single_record(self):
        assert normalize_epistemic(self.make([0.3]))[0].E == 0.0

    def test_affine(self):
        es = [r.E for r in normalize_epistemic(self.make([0.1, 0.2, 0.3]))]
        np.testing.assert_allclose(es, [0.0, 0.5, 1.0], atol=1e-15)

    def test_min_max_oracle(self, rng):
        vals = rng.uniform(0, 0.5, size=50)
        es = np.array([r.E for r in normalize_epistemic(self.make(vals))])
        lo, hi = min(vals), max(vals)
        np.testing.assert_allclose(es, [(v - lo) / (hi - lo) for v in vals], atol=1e-12)
        assert es.min() == 0.0 and es.max() == 1.0

    def test_empty(self):
        with pytest.raises(InputError):
            normalize_epistemic([])


def test_record_scalars_are_traces(rng):
    s = PredictiveSampleSet(random_simplex(rng, 20))
    r = UncertaintyRecord.from_samples("x", s, 1)
    assert r.aleatoric == np.trace(aleatoric(s))
    assert r.epistemic == np.trace(epistemic(s))
    assert r.pred == int(np.argmax(s.mean))
    with pytest.raises(InputError):
        r.scalar("E")


def test_tie_predicts_class_zero():
    r = UncertaintyRecord.from_samples("t", PredictiveSampleSet([[0.5, 0.5]]))
    assert r.pred == 0


def test_records_csv_round_trip(tmp_path, rng):
    recs = [UncertaintyRecord.from_samples(f"r{i}", PredictiveSampleSet(random_simplex(rng, 10)), i % 2) for i in range(6)]
    recs[2].label = None
    normalize_epistemic(recs)
    path = tmp_path / "unc.csv"
    write_records(recs, path)
    back = read_records(path)
    assert path.read_text().splitlines()[0] == "id,pred,label,aleatoric,epistemic,E"
    for a, b in zip(recs, back):
        assert (a.id, a.pred, a.label, a.aleatoric, a.epistemic, a.E) == (b.id, b.pred, b.label, b.aleatoric, b.epistemic, b.E)


def test_read_records_missing_columns(tmp_path):
    path = tmp_path / "bad.csv"
    path.write_text("id,pred\nx,1\n")
    with pytest.raises(InputError):
        read_records(path)
