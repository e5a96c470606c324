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


from cvqkd_rt import link  # noqa: E402
from cvqkd_rt.basemodels import (  # noqa: E402
    CalibrationTraces,
    ChannelModel,
    ReceiverModel,
)
from cvqkd_rt.core import gaussian_symbols  # noqa: E402
from cvqkd_rt.errors import CalibrationError, DomainError  # noqa: E402


@pytest.fixture
def channel() -> ChannelModel:
    return ChannelModel(loss_db=5.2, excess_noise_out=0.022)


@pytest.fixture
def receiver() -> ReceiverModel:
    return ReceiverModel(transmittance=0.48, electronic_noise=0.141)


def test_closed_form_moments(channel: ChannelModel, receiver: ReceiverModel) -> None:
    t = link.signal_gain(channel, receiver)
    assert t**2 == pytest.approx(channel.transmittance * 0.48 / 2)
    assert link.noise_variance(channel, receiver) == pytest.approx(1.141 + 0.24 * 0.022)
    assert link.output_variance(channel, receiver, 4.2) == pytest.approx(
        t**2 * 4.2 + link.noise_variance(channel, receiver)
    )


def test_transmit_matches_closed_form(channel: ChannelModel, receiver: ReceiverModel) -> None:
    block = gaussian_symbols(1, 200_000, 4.2)
    det = link.transmit(block, channel, receiver, seed=2)
    x, y = block.i_samples, det.y_i
    t_hat = float(np.dot(x, y) / np.dot(x, x))
    resid = y - t_hat * x
    assert t_hat == pytest.approx(link.signal_gain(channel, receiver), rel=0.02)
    assert np.var(resid) == pytest.approx(link.noise_variance(channel, receiver), rel=0.02)
    assert np.var(det.y_q) == pytest.approx(
        link.output_variance(channel, receiver, 4.2), rel=0.02
    )


def test_vacuum_input_gives_shot_noise(receiver: ReceiverModel) -> None:
    block = gaussian_symbols(4, 100_000, 0.0)
    det = link.transmit(block, ChannelModel(loss_db=0.0, excess_noise_out=0.0), receiver, 5)
    assert np.var(det.y_i) == pytest.approx(1.0 + receiver.electronic_noise, rel=0.03)


def test_calibration_recovers_units(receiver: ReceiverModel) -> None:
    traces = link.simulate_calibration_traces(receiver, 37.5, n_samples=1 << 16, seed=9)
    shot_noise = link.calibrate_snu(traces)
    assert shot_noise == pytest.approx(37.5, rel=0.03)

    block = gaussian_symbols(3, 100_000, 0.0)
    ch = ChannelModel(loss_db=0.0, excess_noise_out=0.0)
    raw_i, raw_q = link.detect_raw(block, ch, receiver, 4, adc_shot_noise_variance=37.5)
    det = link.normalize_detection(raw_i, raw_q, traces)
    # after normalization vacuum plus electronic noise reads 1 + v_el SNU
    assert np.var(det.y_i) == pytest.approx(1.141, rel=0.04)
    assert det.v_el_hat == pytest.approx(0.141, rel=0.1)
    assert det.shot_noise == pytest.approx(shot_noise)


def test_calibration_fails_without_shot_noise() -> None:
    traces = CalibrationTraces(n_el=1.0, n_nosig=0.5)
    with pytest.raises(CalibrationError):
        link.calibrate_snu(traces)
    with pytest.raises(CalibrationError):
        link.normalize_detection(np.zeros(4), np.zeros(4), traces)


def test_symbol_physics_replays_per_shot(channel: ChannelModel, receiver: ReceiverModel) -> None:
    physics = link.symbol_physics(channel, receiver, master_seed=3)
    block = gaussian_symbols(1, 1024, 4.2)
    first = physics(block, 0)
    again = physics(block, 0)
    other = physics(block, 1)
    np.testing.assert_array_equal(first.y_i, again.y_i)
    assert not np.allclose(first.y_i, other.y_i)
    assert first.diagnostics is None


def test_sweep_xi_profile_knots() -> None:
    assert link.sweep_xi_profile(0.0) == pytest.approx(0.036)
    assert link.sweep_xi_profile(6.0) == pytest.approx(0.023)
    assert link.sweep_xi_profile(15.0) == pytest.approx(0.010)
    assert link.sweep_xi_profile(40.0) == pytest.approx(0.010)


def test_emulate_loss_sweep() -> None:
    base = ChannelModel(loss_db=0.0, excess_noise_out=0.02)
    models = link.emulate_loss_sweep([0.0, 3.0, 3.0, 12.0], base)
    assert [m.loss_db for m in models] == [0.0, 3.0, 3.0, 12.0]
    assert all(m.excess_noise_out == 0.02 for m in models)
    assert models[1].transmittance == pytest.approx(10 ** -0.3)

    profiled = link.emulate_loss_sweep([0.0, 12.0], base, xi_profile=[(0.0, 0.03), (12.0, 0.01)])
    assert [m.excess_noise_out for m in profiled] == pytest.approx([0.03, 0.01])

    called = link.emulate_loss_sweep([2.0], base, xi_profile=lambda loss: loss / 100)
    assert called[0].excess_noise_out == pytest.approx(0.02)


@pytest.mark.parametrize("points", [[-1.0, 2.0], [0.0, 31.0], [5.0, 2.0]])
def test_emulate_loss_sweep_rejects(points: list[float]) -> None:
    with pytest.raises(DomainError):
        link.emulate_loss_sweep(points)


def test_sweep_losses_grid() -> None:
    grid = link.sweep_losses(21.0, 43)
    assert len(grid) == 43
    assert grid[0] == 0.0
    assert grid[-1] == pytest.approx(21.0)
    assert grid[1] == pytest.approx(0.5)
    assert math.isclose(grid[2] - grid[1], 0.5)
