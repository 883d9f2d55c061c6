import numpy as np
import pytest

from fallback_strategies.core.mdp import OBS_SIZE, Transition, TransitionBatch
from fallback_strategies.core.neural_q import (
    CheckpointError, DoubleDQNLearner, EpsilonSchedule, NonFiniteLossError, QNetwork, backward,
    forward, load_checkpoint, save_checkpoint,
)


def random_batch(rng, n, terminal_rate=0.3):
    return [
        Transition(
            rng.uniform(-1, 1, OBS_SIZE), int(rng.integers(6)), float(rng.normal()),
            rng.uniform(-1, 1, OBS_SIZE), bool(rng.random() < terminal_rate),
        )
        for _ in range(n)
    ]


def activation_pattern(net, s):
    memory, _ = net.forward_with_memory(s[None, :])
    return [z > 0 for z in memory[1::2]]


def test_forward_shape_and_input_check(rng):
    net = QNetwork.initialize([OBS_SIZE, 64, 64, 6], rng)
    q = forward(net, rng.uniform(-1, 1, OBS_SIZE))
    assert q.shape == (6,)
    assert np.all(np.isfinite(q))
    with pytest.raises(ValueError):
        forward(net, np.full(OBS_SIZE, np.nan))
    with pytest.raises(ValueError):
        forward(net, np.zeros(OBS_SIZE + 1))


def test_initialization_is_seeded():
    a = QNetwork.initialize([OBS_SIZE, 16, 6], np.random.default_rng(5))
    b = QNetwork.initialize([OBS_SIZE, 16, 6], np.random.default_rng(5))
    assert a.checksum() == b.checksum()
    assert np.all(np.abs(a.weights[0]) <= 1 / np.sqrt(OBS_SIZE))


def test_backward_matches_finite_differences():
    h = 1e-6
    for seed in range(20):
        rng = np.random.default_rng(seed)
        net = QNetwork.initialize([OBS_SIZE, 12, 10, 6], rng)
        s = rng.uniform(-1, 1, OBS_SIZE)
        g = rng.normal(size=6)
        grads = backward(net, s, g)
        base_pattern = activation_pattern(net, s)

        for param, grad in zip(net.parameters(), [x for pair in grads for x in pair]):
            for idx in np.ndindex(param.shape):
                old = param[idx]
                param[idx] = old + h
                plus, pattern_plus = forward(net, s) @ g, activation_pattern(net, s)
                param[idx] = old - h
                minus, pattern_minus = forward(net, s) @ g, activation_pattern(net, s)
                param[idx] = old
                # a ReLU switching inside [-h, h] makes the difference quotient meaningless
                kinks = any(
                    (p != b).any() or (m != b).any()
                    for p, m, b in zip(pattern_plus, pattern_minus, base_pattern)
                )
                if kinks:
                    continue
                numeric = (plus - minus) / (2 * h)
                assert abs(numeric - grad[idx]) <= 1e-4 * max(1.0, abs(numeric), abs(grad[idx]))


def test_backward_rejects_bad_grad_shape(rng):
    net = QNetwork.initialize([OBS_SIZE, 4, 6], rng)
    with pytest.raises(ValueError):
        backward(net, np.zeros(OBS_SIZE), np.zeros(5))


def test_td_targets_match_scalar_loop(small_learner, rng):
    learner = DoubleDQNLearner(small_learner, rng)
    # make the target network differ from the online one
    learner.target = QNetwork.initialize(learner.online.layer_sizes, np.random.default_rng(99))
    batch = random_batch(rng, 32)

    expected = []
    for t in batch:
        if t.terminal:
            expected.append(t.reward)
            continue
        best = int(np.argmax(learner.online.forward(t.next_state)))
        expected.append(t.reward + learner.gamma * learner.target.forward(t.next_state)[best])
    np.testing.assert_allclose(learner.td_targets(batch), expected, rtol=0, atol=1e-12)


def test_terminal_targets_ignore_next_state(small_learner, rng):
    learner = DoubleDQNLearner(small_learner, rng)
    batch = random_batch(rng, 8, terminal_rate=1.0)
    np.testing.assert_array_equal(learner.td_targets(batch), [t.reward for t in batch])


def test_train_step_fits_terminal_batch(small_learner, rng):
    learner = DoubleDQNLearner(small_learner, rng)
    batch = random_batch(rng, small_learner.batch_size, terminal_rate=1.0)
    first = learner.train_step(batch)
    for _ in range(1000):
        last = learner.train_step(batch)
    assert last < 0.1 * first
    assert learner.updates == 1001


def test_target_sync_period(small_learner, rng):
    learner = DoubleDQNLearner(small_learner, rng)
    batch = random_batch(rng, small_learner.batch_size)
    initial = learner.target.checksum()
    for _ in range(small_learner.target_sync_period - 1):
        learner.train_step(batch)
    assert learner.target.checksum() == initial
    assert learner.online.checksum() != initial
    learner.train_step(batch)
    assert learner.target.checksum() == learner.online.checksum()


def test_train_step_checks_batch_size(small_learner, rng):
    learner = DoubleDQNLearner(small_learner, rng)
    with pytest.raises(ValueError):
        learner.train_step(random_batch(rng, small_learner.batch_size + 1))


def test_non_finite_loss_is_reported(small_learner, rng):
    learner = DoubleDQNLearner(small_learner, rng)
    n = small_learner.batch_size
    batch = TransitionBatch(
        states=np.zeros((n, OBS_SIZE)),
        actions=np.zeros(n, dtype=np.int64),
        rewards=np.full(n, 1e200),
        next_states=np.zeros((n, OBS_SIZE)),
        terminals=np.ones(n, dtype=bool),
    )
    with np.errstate(over="ignore"), pytest.raises(NonFiniteLossError):
        learner.train_step(batch)


def test_act_epsilon_extremes(small_learner, rng):
    learner = DoubleDQNLearner(small_learner, rng)
    s = np.zeros(OBS_SIZE)
    greedy = learner.greedy_action(s)
    assert all(learner.act(s, rng, epsilon=0.0) == greedy for _ in range(20))
    seen = {learner.act(s, rng, epsilon=1.0).index for _ in range(300)}
    assert seen == set(range(6))


def test_epsilon_schedule():
    schedule = EpsilonSchedule(1.0, 0.1, 100)
    assert schedule.value(0) == 1.0
    assert schedule.value(50) == pytest.approx(0.55)
    assert schedule.value(100) == pytest.approx(0.1)
    assert schedule.value(10_000) == pytest.approx(0.1)


def test_checkpoint_round_trip_is_exact(tmp_path, rng):
    net = QNetwork.initialize([OBS_SIZE, 7, 5, 6], rng)
    path = save_checkpoint(tmp_path / "a" / "net.ckpt", net, 0.99, 1234)
    ckpt = load_checkpoint(path)
    assert ckpt.network.checksum() == net.checksum()
    assert ckpt.gamma == 0.99
    assert ckpt.step == 1234


def test_checkpoint_rejects_bad_files(tmp_path, rng):
    with pytest.raises(CheckpointError):
        load_checkpoint(tmp_path / "missing.ckpt")

    bad = tmp_path / "bad.ckpt"
    bad.write_text("not a checkpoint\n")
    with pytest.raises(CheckpointError):
        load_checkpoint(bad)

    path = save_checkpoint(tmp_path / "net.ckpt", QNetwork.initialize([OBS_SIZE, 4, 6], rng), 0.99, 1)
    text = path.read_text()
    path.write_text(text.replace("format_version = 1", "format_version = 2"))
    with pytest.raises(CheckpointError, match="version"):
        load_checkpoint(path)

    path.write_text(text.replace("layer_sizes = 8,4,6", "layer_sizes = 8,5,6"))
    with pytest.raises(CheckpointError):
        load_checkpoint(path)


def fixed_output_network(q_values) -> QNetwork:
    """Single linear layer whose output ignores the input"""
    q = np.asarray(q_values, dtype=np.float64)
    return QNetwork([np.zeros((len(q), OBS_SIZE))], [q])


@pytest.mark.parametrize("q_values, expected", [
    ([0, 0, 0, 5, 0, 0], 3),
    ([0, 0, 0, 0, 0, 0], 0),
    ([1, 2, 2, 0, 2, 1], 1),
])
def test_greedy_action_takes_lowest_index_among_ties(small_learner, rng, q_values, expected):
    learner = DoubleDQNLearner(small_learner, rng)
    learner.online = fixed_output_network(q_values)
    assert learner.act(np.zeros(OBS_SIZE), rng, epsilon=0.0).index == expected


def test_full_exploration_is_uniform(small_learner, rng):
    learner = DoubleDQNLearner(small_learner, rng)
    learner.online = fixed_output_network([0, 0, 0, 5, 0, 0])
    s = np.zeros(OBS_SIZE)
    draws = 100_000
    counts = np.bincount([learner.act(s, rng, epsilon=1.0).index for _ in range(draws)], minlength=6)
    expected = draws / 6
    assert np.all(np.abs(counts - expected) <= 0.05 * expected)
