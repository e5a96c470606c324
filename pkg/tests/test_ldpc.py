import sys
from pathlib import Path

import numpy as np
import pytest
import scipy.sparse as sp

# Ensure src/ is importable in tests without editable install
PROJECT_ROOT = Path(__file__).parent.parent
SRC_PATH = PROJECT_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))


from cvqkd_rt import ldpc  # noqa: E402
from cvqkd_rt.basemodels import LdpcCode, ReconciliationConfig  # noqa: E402
from cvqkd_rt.errors import DomainError  # noqa: E402


def test_degree_plan_counts() -> None:
    plan = ldpc.degree_plan(2048, 0.05)
    assert plan.k == 102
    assert plan.m == 2048 - 102
    assert plan.n_core + plan.n_ldgm == 2048
    assert plan.m_core + plan.n_ldgm == plan.m
    assert int(plan.core_degrees.sum()) == int(plan.check_degrees.sum())
    assert int(plan.ldgm_degrees.sum()) == plan.ldgm_degree * plan.n_ldgm


@pytest.mark.parametrize("n, rate", [(2048, 0.0), (2048, 0.5), (16, 0.05)])
def test_degree_plan_rejects(n: int, rate: float) -> None:
    with pytest.raises(DomainError):
        ldpc.degree_plan(n, rate)


def test_gf2_rank() -> None:
    h = sp.csr_matrix(np.array([[1, 1, 0], [0, 1, 1], [1, 0, 1]], dtype=np.uint8))
    assert ldpc.gf2_rank(h) == 2
    assert ldpc.gf2_rank(sp.identity(5, format="csr", dtype=np.uint8)) == 5


def test_constructed_code_shape(small_code: LdpcCode) -> None:
    h = small_code.parity_check
    assert h.shape == (small_code.m, small_code.n)
    assert small_code.rate == pytest.approx(102 / 2048)
    assert ldpc.gf2_rank(h) == small_code.m
    # no repeated edges
    assert h.max() == 1
    # every column is checked at least once
    assert np.all(np.diff(h.tocsc().indptr) > 0)


def test_construction_is_deterministic(small_code: LdpcCode) -> None:
    again = ldpc.construct_code(n=2048, rate=0.05, seed=7, design_snr=0.1)
    assert again.code_id == small_code.code_id
    assert (again.parity_check != small_code.parity_check).nnz == 0


def test_write_and_read_code(small_code: LdpcCode, tmp_path: Path) -> None:
    path = ldpc.write_code(small_code, tmp_path / "codes" / "small.ldpc")
    loaded = ldpc.read_code(path)
    assert loaded.code_id == small_code.code_id
    assert (loaded.n, loaded.m, loaded.k, loaded.seed) == (
        small_code.n,
        small_code.m,
        small_code.k,
        small_code.seed,
    )
    assert loaded.design_snr == small_code.design_snr
    assert (loaded.parity_check != small_code.parity_check).nnz == 0


def test_read_code_rejects_foreign_file(tmp_path: Path) -> None:
    path = tmp_path / "bad.ldpc"
    path.write_text("not a code\n")
    with pytest.raises(DomainError, match="not a cvqkd-rt code file"):
        ldpc.read_code(path)


def test_read_code_rejects_short_body(small_code: LdpcCode, tmp_path: Path) -> None:
    path = ldpc.write_code(small_code, tmp_path / "small.ldpc")
    lines = path.read_text().splitlines()
    path.write_text("\n".join(lines[:-5]) + "\n")
    with pytest.raises(DomainError, match="declares"):
        ldpc.read_code(path)


def test_load_code_uses_cache(tmp_path: Path) -> None:
    config = ReconciliationConfig(
        code_length=1024, code_rate=0.05, code_seed=3, design_snr=0.1, cache_dir=str(tmp_path)
    )
    first = ldpc.load_code(config)
    cached = list((tmp_path / "codes").glob("*.ldpc"))
    assert len(cached) == 1
    second = ldpc.load_code(config)
    assert second.code_id == first.code_id
    assert (second.parity_check != first.parity_check).nnz == 0


def test_load_code_explicit_file(small_code: LdpcCode, tmp_path: Path) -> None:
    path = ldpc.write_code(small_code, tmp_path / "explicit.ldpc")
    config = ReconciliationConfig(code_file=str(path), cache_dir=str(tmp_path / "cache"))
    assert ldpc.load_code(config).code_id == small_code.code_id


def test_decoder_accepts_correct_hard_decisions(small_code: LdpcCode) -> None:
    decoder = ldpc.get_decoder(small_code)
    rng = np.random.default_rng(1)
    u = rng.integers(0, 2, (3, small_code.n), dtype=np.uint8)
    llrs = np.where(u == 0, 4.0, -4.0)
    result = decoder.decode(llrs, decoder.syndrome(u))
    assert result.success.all()
    np.testing.assert_array_equal(result.bits, u)
    np.testing.assert_array_equal(result.iterations, 0)


def test_single_frame_decode(small_code: LdpcCode) -> None:
    rng = np.random.default_rng(2)
    u = rng.integers(0, 2, small_code.n, dtype=np.uint8)
    syndrome = ldpc.get_decoder(small_code).syndrome(u)
    decoded = ldpc.ldpc_decode(np.where(u == 0, 3.0, -3.0), syndrome, small_code)
    assert decoded is not None
    np.testing.assert_array_equal(decoded, u)
    assert ldpc.ldpc_decode(np.zeros(small_code.n), syndrome, small_code) is None
    with pytest.raises(DomainError):
        ldpc.ldpc_decode(np.zeros(10), syndrome, small_code)


def test_decoder_shape_checks(small_code: LdpcCode) -> None:
    decoder = ldpc.get_decoder(small_code)
    with pytest.raises(DomainError):
        decoder.decode(np.zeros((2, 100)), np.zeros((2, small_code.m)))
    with pytest.raises(DomainError):
        decoder.decode(np.zeros((2, small_code.n)), np.zeros((3, small_code.m)))


def test_get_decoder_is_cached(small_code: LdpcCode) -> None:
    assert ldpc.get_decoder(small_code) is ldpc.get_decoder(small_code)


def test_code_performance_extremes(small_code: LdpcCode) -> None:
    good, hopeless = ldpc.measure_code_performance(small_code, [1.0, 0.001], frames=8, seed=4)
    assert good.fer <= 0.25
    assert hopeless.fer == 1.0
    assert good.beta == pytest.approx(2 * small_code.rate / 1.0)
    with pytest.raises(DomainError):
        ldpc.measure_code_performance(small_code, [-1.0], frames=2)


@pytest.mark.slow
def test_default_code_threshold() -> None:
    plan = ldpc.degree_plan(2**15, 0.05)
    threshold = ldpc.ga_threshold(plan)
    # capacity point of a rate-0.05 code is SNR 2^0.1 - 1 ~ 0.072
    assert 0.05 < threshold < 0.5
