import numpy as np
import pytest

from snls_lab.flows import DampedNLSStepper, DampingSpec, FlowParams, NLSStepper
from snls_lab.grid import gaussian, make_grid, normalized
from snls_lab.record import (MAGIC, RecordError, TrajectoryRecord, integrate, uniform_checkpoints)
from snls_lab.stochastic import NoiseSpec, SNLSStepper, sample_path


@pytest.fixture(scope="module")
def grid():
    return make_grid(1, 32.0, 64)


def stochastic_record(grid, horizon=1.0, **kw):
    u0 = normalized(gaussian(grid, 1.0), 1.0)
    noise = NoiseSpec.gaussian(grid, 1.0, 1.0, 0.2)
    stepper = SNLSStepper(FlowParams(grid, 0.01), noise, sample_path(4, 0.01, horizon))
    return integrate(u0, stepper, horizon, uniform_checkpoints(horizon, 5), **kw)


def assert_records_equal(a, b):
    assert a.times == b.times
    assert a.mass == b.mass
    assert a.dissipation == b.dissipation
    assert all(np.array_equal(x, y) for x, y in zip(a.fields, b.fields))
    assert sorted(a.convolution) == sorted(b.convolution)
    for name in a.convolution:
        assert all(np.array_equal(x, y) for x, y in zip(a.convolution[name], b.convolution[name]))
    if a.noise_increments is None:
        assert b.noise_increments is None
    else:
        assert np.array_equal(a.noise_increments, b.noise_increments)


def test_round_trip_stochastic(grid, tmp_path):
    rec = stochastic_record(grid)
    path = tmp_path / "path.trj"
    rec.save(path)
    back = TrajectoryRecord.load(path)
    assert_records_equal(rec, back)
    assert back.complete
    assert np.array_equal(back.noise.V, rec.noise.V)
    assert np.array_equal(back.linear_damping.V2, rec.linear_damping.V2)
    assert back.to_bytes() == rec.to_bytes()


def test_round_trip_damped(grid):
    u0 = normalized(gaussian(grid, 1.0), 1.0)
    rec = integrate(u0, DampedNLSStepper(FlowParams(grid, 0.01), DampingSpec.gaussian(grid)), 1.0,
                    [0.5])
    back = TrajectoryRecord.from_bytes(rec.to_bytes())
    assert_records_equal(rec, back)


@pytest.mark.parametrize("cut", [3, 20, -7, -100])
def test_truncated_record_names_file(grid, tmp_path, cut):
    buf = stochastic_record(grid).to_bytes()
    path = tmp_path / "broken.trj"
    path.write_bytes(buf[:cut])
    with pytest.raises(RecordError, match="broken.trj"):
        TrajectoryRecord.load(path)


def test_bad_magic_and_trailing_bytes(grid, tmp_path):
    buf = stochastic_record(grid).to_bytes()
    path = tmp_path / "x.trj"
    path.write_bytes(b"NOTATRJ!" + buf[len(MAGIC):])
    with pytest.raises(RecordError, match="x.trj"):
        TrajectoryRecord.load(path)
    path.write_bytes(buf + b"\0")
    with pytest.raises(RecordError, match="trailing"):
        TrajectoryRecord.load(path)


def test_checkpoints_must_align(grid):
    u0 = gaussian(grid)
    with pytest.raises(ValueError):
        integrate(u0, NLSStepper(FlowParams(grid, 0.01)), 1.0, [0.505])
    with pytest.raises(ValueError):
        integrate(u0, NLSStepper(FlowParams(grid, 0.01)), 1.0, [1.5])
    with pytest.raises(ValueError):
        integrate(u0, NLSStepper(FlowParams(grid, 0.01)), 1.005)


def test_horizon_always_recorded(grid):
    rec = integrate(gaussian(grid), NLSStepper(FlowParams(grid, 0.01)), 1.0, [0.3])
    assert rec.times == pytest.approx([0.0, 0.3, 1.0])


def test_resume_is_bitwise_identical(grid):
    full = stochastic_record(grid)
    part = stochastic_record(grid, stop_at=0.5)
    assert not part.complete and part.times[-1] < 1.0
    again = TrajectoryRecord.from_bytes(part.to_bytes())
    u0 = normalized(gaussian(grid, 1.0), 1.0)
    noise = NoiseSpec.gaussian(grid, 1.0, 1.0, 0.2)
    stepper = SNLSStepper(FlowParams(grid, 0.01), noise, sample_path(4, 0.01, 1.0))
    resumed = integrate(u0, stepper, 1.0, uniform_checkpoints(1.0, 5), resume=again)
    assert resumed.complete
    assert_records_equal(full, resumed)


def test_step_and_index_lookup(grid):
    rec = stochastic_record(grid)
    assert rec.step_of(0.4) == 40
    assert rec.index_of(0.4) == 2
    with pytest.raises(RecordError):
        rec.index_of(0.3)
    with pytest.raises(RecordError):
        rec.step_of(0.4005)
    assert not rec.is_dense


def test_path_too_short_rejected(grid):
    noise = NoiseSpec.gaussian(grid)
    stepper = SNLSStepper(FlowParams(grid, 0.01), noise, sample_path(0, 0.01, 0.5))
    with pytest.raises(ValueError):
        integrate(gaussian(grid), stepper, 1.0)
