import math
import sys
from pathlib import Path

import numpy as np
import pytest

# Ensure src/ is importable in tests without editable install
PROJECT_ROOT = Path(__file__).parent.parent
SRC_PATH = PROJECT_ROOT / "src"
if str(SRC_PATH) not in sys.path:
    sys.path.insert(0, str(SRC_PATH))


from cvqkd_rt import core  # noqa: E402
from cvqkd_rt.errors import DomainError  # noqa: E402


def test_db_transmittance_inverse() -> None:
    for loss in (0.0, 0.5, 3.0, 10.4, 29.9):
        t = core.db_to_transmittance(loss)
        assert 0.0 < t <= 1.0
        assert core.transmittance_to_db(t) == pytest.approx(loss, abs=1e-12)
    assert core.db_to_transmittance(10.0) == pytest.approx(0.1)


@pytest.mark.parametrize("bad", [-0.1, math.inf, math.nan])
def test_db_to_transmittance_rejects(bad: float) -> None:
    with pytest.raises(DomainError):
        core.db_to_transmittance(bad)


@pytest.mark.parametrize("bad", [0.0, -0.2, 1.5])
def test_transmittance_to_db_rejects(bad: float) -> None:
    with pytest.raises(DomainError):
        core.transmittance_to_db(bad)


def test_fiber_length_conversion() -> None:
    assert core.fiber_km_to_loss_db(26) == pytest.approx(5.2)
    assert core.loss_db_to_fiber_km(20.4) == pytest.approx(102.0)
    assert core.fiber_km_to_loss_db(10, attenuation_db_per_km=0.17) == pytest.approx(1.7)
    with pytest.raises(DomainError):
        core.fiber_km_to_loss_db(-1.0)


def test_excess_noise_referral() -> None:
    t_ch = 0.25
    xi_in = core.xi_output_to_input(0.01, t_ch)
    assert xi_in == pytest.approx(0.04)
    assert core.xi_input_to_output(xi_in, t_ch) == pytest.approx(0.01)
    with pytest.raises(DomainError):
        core.xi_output_to_input(0.01, 0.0)


def test_rng_stream_is_reproducible_and_independent() -> None:
    a = core.rng_stream(7, 3, "alice_symbols").standard_normal(16)
    b = core.rng_stream(7, 3, "alice_symbols").standard_normal(16)
    other_stream = core.rng_stream(7, 3, "channel_noise").standard_normal(16)
    other_shot = core.rng_stream(7, 4, "alice_symbols").standard_normal(16)
    other_seed = core.rng_stream(8, 3, "alice_symbols").standard_normal(16)
    np.testing.assert_array_equal(a, b)
    assert not np.allclose(a, other_stream)
    assert not np.allclose(a, other_shot)
    assert not np.allclose(a, other_seed)


def test_rng_stream_unknown_name() -> None:
    with pytest.raises(DomainError, match="unknown RNG stream"):
        core.rng_stream(1, 0, "eve")


def test_as_generator_passthrough() -> None:
    rng = np.random.default_rng(5)
    assert core.as_generator(rng) is rng
    np.testing.assert_array_equal(
        core.as_generator(11).random(4), core.as_generator(11).random(4)
    )


def test_gaussian_symbols_statistics() -> None:
    block = core.gaussian_symbols(3, 200_000, 4.2)
    assert len(block) == 200_000
    assert block.i_samples.shape == block.q_samples.shape
    # Standard error of a variance estimate over 2e5 draws is ~0.3% of v_mod.
    assert np.var(block.i_samples) == pytest.approx(4.2, rel=0.02)
    assert np.var(block.q_samples) == pytest.approx(4.2, rel=0.02)
    assert abs(np.mean(block.i_samples)) < 0.05
    assert abs(np.corrcoef(block.i_samples, block.q_samples)[0, 1]) < 0.01
    np.testing.assert_allclose(
        block.as_complex(), block.i_samples + 1j * block.q_samples
    )


def test_gaussian_symbols_deterministic() -> None:
    a = core.gaussian_symbols(core.rng_stream(1, 0, "alice_symbols"), 64, 1.0)
    b = core.gaussian_symbols(core.rng_stream(1, 0, "alice_symbols"), 64, 1.0)
    np.testing.assert_array_equal(a.i_samples, b.i_samples)


@pytest.mark.parametrize("n, v_mod", [(0, 1.0), (10, -1.0), (10, math.nan)])
def test_gaussian_symbols_rejects(n: int, v_mod: float) -> None:
    with pytest.raises(DomainError):
        core.gaussian_symbols(1, n, v_mod)
