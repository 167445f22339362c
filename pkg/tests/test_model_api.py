import threading

import numpy as np
import pytest

from rmm_interp.model_api import (
    EvalCounter,
    InvalidArgumentError,
    RmmError,
    TimeGrid,
    eval_counted,
    eval_counted_batch,
    make_time_grid,
    parallel_map,
)


def test_uniform_grid_points_and_weights():
    grid = make_time_grid(0.0, 1.0, 300)
    assert grid.m == 300
    assert grid.points[0] == pytest.approx(1 / 300)
    assert grid.points[-1] == 1.0
    np.testing.assert_allclose(grid.sq_weights, 1 / 300)
    assert np.all(np.diff(grid.points) > 0)


def test_trapezoid_grid_halves_end_weights():
    grid = make_time_grid(0.0, 2.0, 5, scheme="trapezoid")
    np.testing.assert_allclose(grid.points, [0.0, 0.5, 1.0, 1.5, 2.0])
    np.testing.assert_allclose(grid.sq_weights, [0.25, 0.5, 0.5, 0.5, 0.25])
    assert grid.sq_weights.sum() == pytest.approx(2.0)


@pytest.mark.parametrize("t_start, t_end, m", [(0.0, 1.0, 0), (1.0, 1.0, 3), (0.0, float("inf"), 3)])
def test_make_time_grid_rejects_bad_input(t_start, t_end, m):
    with pytest.raises(InvalidArgumentError):
        make_time_grid(t_start, t_end, m)


def test_time_grid_requires_increasing_points():
    with pytest.raises(ValueError):
        TimeGrid(points=[0.1, 0.1, 0.2], sq_weights=[1.0, 1.0, 1.0])
    with pytest.raises(ValueError):
        TimeGrid(points=[0.1, 0.2], sq_weights=[0.0, 0.0])


def test_weights_are_square_roots():
    grid = TimeGrid(points=[1.0, 2.0], sq_weights=[4.0, 9.0])
    np.testing.assert_allclose(grid.weights, [2.0, 3.0])


def test_invalid_argument_is_value_error():
    assert issubclass(InvalidArgumentError, RmmError)
    assert issubclass(InvalidArgumentError, ValueError)


class TestEvalCounter:

    def test_increment_and_reset(self):
        counter = EvalCounter()
        counter.increment()
        counter.increment(4)
        assert counter.count == 5
        counter.reset()
        assert counter.count == 0

    def test_negative_increment_rejected(self):
        with pytest.raises(InvalidArgumentError):
            EvalCounter().increment(-1)

    def test_concurrent_increments_are_not_lost(self):
        counter = EvalCounter()

        def work():
            for _ in range(1000):
                counter.increment()

        threads = [threading.Thread(target=work) for _ in range(8)]
        for th in threads:
            th.start()
        for th in threads:
            th.join()
        assert counter.count == 8000


def test_eval_counted_counts_one(decay_model):
    counter = EvalCounter()
    out = eval_counted(decay_model, counter, np.array([1.0, 2.0]), 0.0, np.array([3.0]))
    np.testing.assert_allclose(out, [-3.0, -6.0])
    assert counter.count == 1


def test_eval_counted_checks_dimensions(decay_model):
    with pytest.raises(InvalidArgumentError):
        eval_counted(decay_model, None, np.ones(3), 0.0, np.array([1.0]))
    with pytest.raises(InvalidArgumentError):
        eval_counted(decay_model, None, np.ones(2), 0.0, np.array([1.0, 2.0]))


def test_batch_counts_rows(decay_model, kinetics):
    counter = EvalCounter()
    states = np.arange(10.0).reshape(5, 2)
    out = eval_counted_batch(decay_model, counter, states, np.zeros(5), np.array([2.0]))
    np.testing.assert_allclose(out, -2.0 * states)
    assert counter.count == 5

    batch = np.full((4, 3), 0.5)
    out = eval_counted_batch(kinetics, counter, batch, np.zeros(4), np.array([1.0]))
    assert out.shape == (4, 3)
    assert counter.count == 9


def test_parallel_map_preserves_order():
    items = list(range(50))
    assert parallel_map(lambda x: x * x, items, jobs=4) == [x * x for x in items]
    assert parallel_map(lambda x: -x, items, jobs=1) == [-x for x in items]
