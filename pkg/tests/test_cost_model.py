import json
import random
from fractions import Fraction

import numpy as np
import pytest
from sklearn.base import clone
from sklearn.utils.estimator_checks import check_estimator

from dtlsperf.cost_model import (CostModelParams, DegenerateFit, DomainError,
                                 LinearCostEstimator, PredictionInput, SawtoothCostEstimator,
                                 eval_component, eval_total, fit_linear, fit_sawtooth,
                                 insert_per_conn, load_params, predict_throughput, save_params,
                                 smape, total_parts)

P = CostModelParams()


def _dmaps_oracle(c, base=400, saw=170):
    # exact rational evaluation; the next power of two found by doubling
    top = 1
    while top <= c:
        top *= 2
    return c * (base + saw * (Fraction(top - 8, c) - 1))


def test_default_components():
    assert eval_component(P, "rx", 1) == 77
    assert eval_component(P, "tx", 1) == 66
    assert eval_component(P, "hash", 1) == 62
    assert eval_component(P, "mem", 0) == 1477
    assert eval_component(P, "openssl_r", 500) == 6000
    assert eval_component(P, "lookup", 1) == 118
    assert eval_component(P, "openssl_s", 0) == 5759960


def test_dmaps_values():
    assert eval_component(P, "dmaps", 1000) == pytest.approx(402720, abs=5e-4)
    assert eval_component(P, "dmaps", 1024) == pytest.approx(582320, abs=5e-4)
    for c in (1000, 1023, 1500, 2047, 4096, 99_999):
        assert eval_component(P, "dmaps", c) == round(float(_dmaps_oracle(c)), 3)


def test_dmaps_small_c():
    with pytest.raises(DomainError):
        eval_component(P, "dmaps", 999)
    assert eval_component(P, "dmaps", 8, allow_small=True) == round(float(_dmaps_oracle(8)), 3)


def test_bad_component_and_arg():
    with pytest.raises(ValueError):
        eval_component(P, "nope", 1)
    with pytest.raises(ValueError):
        eval_component(P, "tx", -1)


def test_eval_total_values():
    assert eval_total(P, c=1000, p=10**6) == 8_655_319_437
    assert eval_total(P, c=1000, p=0) == 2_332_319_437
    assert eval_total(P, PredictionInput(c=1000, p=10**6)) == 8_655_319_437


def test_aggregate_constants():
    assert P.non_crypto_per_pkt == 323
    assert P.per_packet == 6323
    assert P.insert_worst_per_conn == 570
    assert P.per_connection == 2_326_558
    assert P.fixed == 5_761_437
    assert P.crypto_passes == 1


def test_additivity_random_inputs():
    rnd = random.Random(21)
    for _ in range(100):
        c, p = rnd.randrange(0, 10**5), rnd.randrange(0, 10**7)
        b = rnd.randrange(0, 10**9)
        inp = PredictionInput(c=c, p=p, b=b)
        parts = total_parts(P, inp)
        expected = (eval_component(P, "tx", p) + eval_component(P, "rx", p)
                    + eval_component(P, "hash", p) + eval_component(P, "lookup", p)
                    + eval_component(P, "mem", c) + eval_component(P, "insert_worst", c)
                    + eval_component(P, "openssl_s", c) + eval_component(P, "openssl_r", b))
        assert eval_total(P, inp) == pytest.approx(sum(parts.values()), abs=1e-3)
        assert eval_total(P, inp) == pytest.approx(expected, abs=1e-3)
        assert eval_total(P, inp) == pytest.approx(5761437 + 2326558 * c + 323 * p + 12 * b,
                                                   abs=1e-3)


def test_monotonic():
    rnd = random.Random(22)
    for _ in range(100):
        c, p, b = rnd.randrange(10**4), rnd.randrange(10**6), rnd.randrange(10**8)
        base = eval_total(P, c=c, p=p, b=b)
        assert eval_total(P, c=c + 1, p=p, b=b) >= base
        assert eval_total(P, c=c, p=p + 1, b=b) >= base
        assert eval_total(P, c=c, p=p, b=b + 1) >= base


def test_two_passes():
    two = P.replace(crypto_passes=2)
    assert two.per_packet == 323 + 12000
    assert eval_total(two, c=0, p=1) == 5761437 + 12323


def test_sawtooth_bound():
    # (400, 570] holds except for the last eight connection counts before
    # each power of two, where the occupancy term is <= 0
    for c in range(1000, 1 << 17):
        v = insert_per_conn(P, c)
        top = 1 << c.bit_length()
        assert v < 570
        assert v >= 400 - 170 * 7 / c - 1e-9
        assert (v > 400) == (c < top - 8), c
    assert insert_per_conn(P, 2047) == pytest.approx(400 - 170 * 7 / 2047)


def test_sawtooth_worst_case_approaches_570():
    vals = [insert_per_conn(P, (1 << k) + 1) for k in (10, 14, 20, 30)]
    assert vals == sorted(vals)
    assert 0 < 570 - vals[-1] < 1e-5


def test_throughput():
    t = predict_throughput(P, PredictionInput(cpu_hz=3.2e9))
    assert t.pps == 506_088 and not t.capped
    capped = predict_throughput(P, PredictionInput(cpu_hz=3.2e9, bandwidth_cap=1e9))
    assert capped.capped and capped.bps == 1e9 and capped.pps == 217_013
    # doubling the per-packet cost halves the rate; 7.2e9 keeps both divisions exact
    one = predict_throughput(P, PredictionInput(cpu_hz=6323 * 2 * 10**6))
    doubled = predict_throughput(P.replace(tx_per_pkt=66 + 6323), PredictionInput(
        cpu_hz=6323 * 2 * 10**6))
    assert doubled.pps * 2 == one.pps
    with pytest.raises(ValueError):
        predict_throughput(P, PredictionInput(cpu_hz=0))


def test_throughput_with_connection_rate():
    t = predict_throughput(P, PredictionInput(cpu_hz=3.2e9, conn_rate=100))
    assert t.pps == int((3.2e9 - 100 * 2326558) // 6323)


def test_smape():
    assert smape([1, 2, 3], [1, 2, 3]) == 0
    assert smape([110], [100]) == pytest.approx(9.524, abs=1e-3)
    assert smape([0], [0]) == 0
    assert smape([5], [0]) == 200
    with pytest.raises(ValueError):
        smape([1, 2], [1])
    with pytest.raises(ValueError):
        smape([], [])


def test_smape_symmetric_and_bounded():
    rng = np.random.default_rng(3)
    for _ in range(200):
        f = rng.normal(0, 100, size=5)
        a = rng.normal(0, 100, size=5)
        s = smape(f, a)
        assert s == pytest.approx(smape(a, f))
        assert 0 <= s <= 200


def test_fit_linear_exact():
    fit = fit_linear([(1, 70), (2, 140), (3, 210)])
    assert fit.slope == pytest.approx(70) and fit.intercept == pytest.approx(0, abs=1e-9)
    assert fit.smape == pytest.approx(0, abs=1e-9)
    fit = fit_linear([(0, 1477), (1, 1831), (2, 2185)])
    assert fit.slope == pytest.approx(354) and fit.intercept == pytest.approx(1477)


def test_fit_linear_noisy():
    rng = np.random.default_rng(11)
    x = np.linspace(100, 10_000, 60)
    y = 118 * x + rng.normal(0, 5 * x)
    fit = fit_linear(zip(x, y), zero_intercept=True)
    assert abs(fit.slope - 118) / 118 < 0.05
    assert fit.intercept == 0


def test_fit_linear_degenerate():
    with pytest.raises(DegenerateFit):
        fit_linear([(5, 1), (5, 2)])
    with pytest.raises(DegenerateFit):
        fit_linear([])


def test_fit_sawtooth_exact():
    cs = [1000, 1500, 2048, 3000, 5000]
    fit = fit_sawtooth([(c, float(_dmaps_oracle(c)) / c) for c in cs])
    assert fit.base == pytest.approx(400) and fit.saw == pytest.approx(170)
    assert fit.smape == pytest.approx(0, abs=1e-9)


def test_fit_sawtooth_noisy():
    rng = np.random.default_rng(5)
    cs = np.arange(1000, 20000, 250)
    y = [float(_dmaps_oracle(int(c))) / c * (1 + rng.uniform(-0.1, 0.1)) for c in cs]
    fit = fit_sawtooth(zip(cs, y))
    assert fit.smape <= 15


def test_fit_sawtooth_errors():
    with pytest.raises(DomainError):
        fit_sawtooth([(500, 1.0), (2000, 1.0)])
    with pytest.raises(DegenerateFit):
        fit_sawtooth([(1500, 1.0)])


@pytest.mark.parametrize("est", [LinearCostEstimator(), LinearCostEstimator(zero_intercept=True)])
def test_linear_estimator_api(est):
    x = np.arange(1, 20, dtype=float).reshape(-1, 1)
    y = 3 * x[:, 0] + (0 if est.zero_intercept else 7)
    fitted = clone(est).fit(x, y)
    assert fitted.predict([[100]])[0] == pytest.approx(300 if est.zero_intercept else 307)
    assert fitted.score(x, y) == pytest.approx(1.0)
    assert est.get_params() == {"zero_intercept": est.zero_intercept}


def test_sawtooth_estimator_api():
    cs = np.array([1000, 1500, 2048, 3000, 5000], dtype=float)
    y = np.array([float(_dmaps_oracle(int(c))) / c for c in cs])
    est = SawtoothCostEstimator().fit(cs.reshape(-1, 1), y)
    assert est.predict([[4096]])[0] == pytest.approx(float(_dmaps_oracle(4096)) / 4096)
    assert est.get_params() == {"min_connections": 1000}


def test_params_validation_and_io(tmp_path):
    with pytest.raises(ValueError):
        CostModelParams(tx_per_pkt=-1)
    with pytest.raises(ValueError):
        CostModelParams(payload_bytes_per_pkt=0)
    with pytest.raises(ValueError):
        CostModelParams(crypto_passes=0)
    with pytest.raises(ValueError):
        CostModelParams.from_dict({"bogus": 1})
    path = tmp_path / "params.json"
    save_params(P.replace(hash_per_pkt=70), path)
    assert load_params(str(path)).hash_per_pkt == 70
    assert load_params("defaults") == P
    assert set(json.loads(path.read_text())) == set(P.to_dict())
