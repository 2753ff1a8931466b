import numpy as np
import pytest

import mbq


@pytest.fixture
def rng():
    return np.random.default_rng(7)


def test_greedy_hand_case():
    code = mbq.greedy_quantize(np.array([1.0, 2.0, 4.0]), 1)
    assert code.alphas == pytest.approx([7.0 / 3.0])
    np.testing.assert_array_equal(code.planes, [[1, 1, 1]])


def test_alternating_beats_greedy(rng):
    w = rng.normal(size=4096)
    for k in (2, 3):
        greedy = mbq.relative_mse(w, mbq.greedy_quantize(w, k).reconstruct())
        alt = mbq.alternating_quantize(w, k)
        assert mbq.relative_mse(w, alt.reconstruct()) <= greedy
        assert alt.is_canonical()


def test_residuals_non_increasing(rng):
    res = mbq.alternating_residuals(rng.normal(size=500), 3, 5)
    assert all(b <= a * (1 + 1e-12) for a, b in zip(res, res[1:]))


def test_code_round_trip(rng):
    code = mbq.refined_greedy_quantize(rng.normal(size=70), 2)
    again = mbq.MultiBitCode(code.alphas, code.planes)
    np.testing.assert_array_equal(again.reconstruct(), code.reconstruct())


def test_bst_matches_exhaustive():
    alphas = [1.0, 0.5]
    values, _ = mbq.build_codebook(alphas)
    for x in np.linspace(-2, 2, 41):
        dist = np.abs(np.array(values) - x)
        # Ties resolve to the larger value.
        assert mbq.bst_assign(x, alphas) == int(np.flatnonzero(dist == dist.min())[-1])


def test_uniform_and_ternary():
    values, scale = mbq.uniform_quantize(np.array([-1.0, 0.2, 1.0]), 2)
    assert scale == 1.0
    assert set(np.round(values * 3).astype(int)) <= {-3, -1, 1, 3}
    alpha, trits = mbq.ternary_quantize(np.array([2.0, -2.0, 0.01]))
    assert alpha > 0 and trits == [1, -1, 0]


def test_packed_gemv_matches_reconstruction(rng):
    w = rng.normal(size=(33, 130))
    q = mbq.quantize_matrix(w, 2)
    assert q.reconstruct().shape == (33, 130)
    a = mbq.alternating_quantize(rng.normal(size=130), 2)
    ref = q.reconstruct() @ a.reconstruct()
    np.testing.assert_allclose(mbq.quantized_gemv(q, a), ref, atol=1e-4)
    np.testing.assert_allclose(mbq.quantized_gemv_concat(q, a, 2), ref, atol=1e-4)
    assert mbq.xnor_popcount_dot([1, -1, 1, 1, -1], [1, 1, -1, 1, -1]) == 1


def test_cost_model():
    assert mbq.theoretical_speedup(4096, 1024, 2, 2) == pytest.approx(7.66682, abs=1e-5)
    assert mbq.quantization_cost(1024, 2, 2) == (16384, 12288)


def test_compare_is_deterministic():
    a = mbq.compare(bits=[2], n=2000, seed=3)
    assert a == mbq.compare(bits=[2], n=2000, seed=3)
    by_method = {row["method"]: row["mean_rel_mse"] for row in a}
    assert by_method["alternating"] <= by_method["greedy"]


def test_model_files(tmp_path):
    model, tokens, packed = tmp_path / "m.mbqw", tmp_path / "t.mbqt", tmp_path / "m.mbqq"
    mbq.write_random_model(model, vocab=16, dim=8, hidden=8, seed=2)
    ids = list(np.random.default_rng(1).integers(0, 16, size=200))
    mbq.write_tokens(tokens, ids)
    assert mbq.read_tokens(tokens) == ids
    summary = mbq.quantize_file(model, packed, 8)
    assert all(s["rel_mse"] < 1e-3 for s in summary)
    full = mbq.eval_ppw_file(model, tokens, 8)
    quant = mbq.eval_ppw_file(packed, tokens, 8)
    assert full["token_count"] == 199
    assert abs(np.log(full["ppw"]) - np.log(quant["ppw"])) < 0.05
    with pytest.raises(mbq.FormatError, match="file not found"):
        mbq.eval_ppw_file(tmp_path / "missing", tokens)
    with pytest.raises(mbq.FormatError):
        mbq.eval_ppw_file(tokens, tokens)


def test_uniform_model_ppw_is_vocab(tmp_path):
    model, tokens = tmp_path / "z.mbqw", tmp_path / "t.mbqt"
    mbq.write_random_model(model, vocab=64, uniform=True)
    mbq.write_tokens(tokens, list(range(64)))
    assert mbq.eval_ppw_file(model, tokens)["ppw"] == pytest.approx(64.0, rel=1e-9)


def test_selfcheck_and_training():
    assert all(r["passed"] for r in mbq.selfcheck())
    r = mbq.train_toy()
    assert len(r["train_loss"]) == r["epochs_run"] <= 50
    assert r["train_loss"][-1] <= 0.5 * r["initial_train_loss"]
