#!/usr/bin/env python
# -*- coding: utf-8 -*-
import sys
sys.path.append('.')

import multiprocessing
import threading
from concurrent.futures import ThreadPoolExecutor

import numpy as np
import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from app.errors import ProtocolError, TransportAborted
from app.modules.collective import (
    ParameterServer,
    Transport,
    WorkerId,
    chunk_bounds,
    expected_ring_messages,
    gather_sum,
    gossip_exchange,
    gossip_finalize,
    gossip_finalize_exchange,
    gossip_pairs,
    gossip_round,
    max_chunk_elements,
    max_pairwise_distance,
    parameter_server_round,
    push_pull,
    ring_all_reduce,
    ring_graph,
    spread,
)


def run_workers(n, target):
    """Lance ``target(worker)`` sur n threads et renvoie les résultats par rang"""
    with ThreadPoolExecutor(max_workers=n) as pool:
        futures = [pool.submit(target, WorkerId(rank, n)) for rank in range(n)]
        return [f.result(timeout=60) for f in futures]


def ring(vectors):
    transport = Transport(len(vectors), 'thread', recv_timeout=30)
    results = run_workers(len(vectors), lambda w: ring_all_reduce(vectors[w.rank], w, transport))
    return results, transport.stats()


def test_chunk_bounds_cover_vector():
    assert chunk_bounds(10, 3) == [(0, 4), (4, 7), (7, 10)]
    assert chunk_bounds(2, 4) == [(0, 1), (1, 2), (2, 2), (2, 2)]
    assert max_chunk_elements(10, 3) == 4


@pytest.mark.parametrize('n', [1, 2, 3, 4, 8])
@pytest.mark.parametrize('length', [1, 5, 1246, 10000])
def test_ring_all_reduce_integer_mode_is_exact(n, length):
    rng = np.random.default_rng(n * 100003 + length)
    vectors = [rng.integers(-1000, 1000, size=length) for _ in range(n)]
    results, stats = ring(vectors)
    expected = gather_sum(vectors)
    for result in results:
        np.testing.assert_array_equal(result, expected)
    assert stats.messages == expected_ring_messages(n)


@pytest.mark.parametrize('n', [2, 3, 4, 8])
def test_ring_all_reduce_float32(n):
    rng = np.random.default_rng(n)
    vectors = [rng.uniform(0, 1, size=1246).astype(np.float32) for _ in range(n)]
    results, stats = ring(vectors)
    expected = np.sum(np.stack(vectors).astype(np.float64), axis=0)
    for result in results:
        assert result.dtype == np.float32
        np.testing.assert_allclose(result, expected, rtol=1e-6)
        np.testing.assert_array_equal(result, results[0])
    assert stats.messages == 2 * n * (n - 1)
    # chaque message porte au plus ceil(D / N) éléments de 4 octets
    assert stats.bytes <= stats.messages * max_chunk_elements(1246, n) * 4


@pytest.mark.parametrize('n', [2, 3, 4, 8])
def test_ring_all_reduce_float64_matches_sum(n):
    rng = np.random.default_rng(50 + n)
    vectors = [rng.uniform(-1, 1, size=1246) for _ in range(n)]
    results, _ = ring(vectors)
    expected = np.sum(np.stack(vectors), axis=0)
    for result in results:
        assert result.dtype == np.float64
        np.testing.assert_allclose(result, expected, rtol=0, atol=1e-12)


def test_ring_all_reduce_worked_example():
    results, _ = ring([np.array([1, 2]), np.array([3, 4]), np.array([5, 6])])
    for result in results:
        np.testing.assert_array_equal(result, [9, 12])


def test_ring_all_reduce_fewer_elements_than_workers():
    vectors = [np.array([float(r)]) for r in range(4)]
    results, _ = ring(vectors)
    for result in results:
        np.testing.assert_array_equal(result, [6.0])


def test_ring_all_reduce_length_mismatch_is_protocol_error():
    transport = Transport(2, 'thread', recv_timeout=5)
    vectors = [np.zeros(4), np.zeros(6)]

    def target(worker):
        try:
            ring_all_reduce(vectors[worker.rank], worker, transport)
        except ProtocolError as e:
            transport.abort()
            return e
        except TransportAborted as e:
            return e
        return None

    outcomes = run_workers(2, target)
    assert any(isinstance(o, ProtocolError) for o in outcomes)


def test_transport_counts_and_fifo():
    transport = Transport(2, 'thread')
    for value in range(5):
        transport.send(0, 1, np.array([value], dtype=np.float64))
    received = [int(transport.recv(1, 0, timeout=1)[0]) for _ in range(5)]
    assert received == [0, 1, 2, 3, 4]
    stats = transport.stats()
    assert stats.messages == 5
    assert stats.bytes == 40


@settings(max_examples=30, deadline=None)
@given(st.lists(st.lists(st.integers(-100, 100), max_size=5), max_size=10))
def test_transport_preserves_order_of_payloads(payloads):
    transport = Transport(3, 'thread')
    for payload in payloads:
        transport.send(2, 0, np.array(payload, dtype=np.int64))
    out = [transport.recv(0, 2, timeout=1).tolist() for _ in payloads]
    assert out == payloads


def test_transport_send_copies_payload():
    transport = Transport(2, 'thread')
    payload = np.array([1.0, 2.0])
    transport.send(0, 1, payload)
    payload[0] = 99.0
    np.testing.assert_array_equal(transport.recv(1, 0, timeout=1), [1.0, 2.0])


def test_transport_recv_timeout_and_unknown_link():
    transport = Transport(2, 'thread')
    with pytest.raises(ProtocolError):
        transport.recv(1, 0, timeout=0.1)
    with pytest.raises(ProtocolError):
        transport.send(0, 0, np.zeros(1))


def test_transport_close_rejects_later_sends():
    transport = Transport(2, 'thread')
    transport.close()
    transport.close()
    assert transport.closed
    with pytest.raises(ProtocolError):
        transport.send(0, 1, np.zeros(1))


def test_process_transport_close_joins_queues():
    transport = Transport(2, 'process', multiprocessing.get_context('spawn'), recv_timeout=10)
    transport.send(0, 1, np.arange(3.0))
    np.testing.assert_array_equal(transport.recv(1, 0), [0.0, 1.0, 2.0])
    transport.close()
    assert transport.closed
    assert transport.stats().messages == 1


def test_transport_abort_unblocks_receivers():
    transport = Transport(2, 'thread')
    outcome = {}

    def blocked():
        try:
            transport.recv(1, 0, timeout=30)
        except TransportAborted as e:
            outcome['error'] = e

    thread = threading.Thread(target=blocked)
    thread.start()
    transport.abort()
    thread.join(timeout=5)
    assert not thread.is_alive()
    assert isinstance(outcome['error'], TransportAborted)
    with pytest.raises(TransportAborted):
        transport.send(0, 1, np.zeros(1))


def test_parameter_server_round_averages_before_step():
    params = np.array([1.0, 1.0])
    grads = [np.array([1.0, 0.0]), np.array([3.0, 2.0])]
    result = parameter_server_round(params, grads, lambda theta, g: theta - 0.5 * g)
    np.testing.assert_array_equal(result, [0.0, 0.5])
    with pytest.raises(ProtocolError):
        parameter_server_round(params, [], lambda theta, g: theta)
    with pytest.raises(ProtocolError):
        parameter_server_round(params, [np.zeros(3)], lambda theta, g: theta)


@pytest.mark.parametrize('n', [1, 2, 4])
def test_parameter_server_over_transport(n):
    transport = Transport(n + 1, 'thread', recv_timeout=30)
    server = ParameterServer(np.zeros(3), n, transport)
    rounds = 3
    server_thread = threading.Thread(target=server.serve, args=(rounds, lambda theta, g: theta - g))
    server_thread.start()

    def worker_loop(worker):
        params = None
        for _ in range(rounds):
            params = push_pull(np.full(3, float(worker.rank + 1)), worker, n, transport)
        return params

    results = run_workers(n, worker_loop)
    server_thread.join(timeout=30)
    mean = sum(range(1, n + 1)) / n
    for params in results:
        np.testing.assert_allclose(params, np.full(3, -rounds * mean))
    assert transport.stats().messages == 2 * n * rounds


def test_gossip_pairs_schedule():
    assert gossip_pairs(4, 0) == [(0, 1), (2, 3)]
    assert gossip_pairs(4, 1) == [(1, 2), (3, 0)]
    assert gossip_pairs(5, 0) == [(0, 1), (2, 3)]
    assert gossip_pairs(5, 1) == [(1, 2), (3, 4)]
    assert gossip_pairs(1, 0) == []
    assert ring_graph(4) == [(0, 1), (0, 3), (1, 2), (2, 3)]


def test_gossip_round_converges_on_four_workers():
    params = [np.array([0.0]), np.array([4.0]), np.array([8.0]), np.array([12.0])]
    graph = ring_graph(4)
    spreads = [spread(params)]
    for round_index in range(2):
        params = gossip_round(params, graph, round_index)
        spreads.append(spread(params))
    assert spreads == [12.0, 8.0, 0.0]
    for p in params:
        np.testing.assert_array_equal(p, [6.0])


def test_gossip_single_worker_is_identity():
    params = [np.array([1.0, 2.0])]
    assert np.array_equal(gossip_round(params, ring_graph(1), 0)[0], params[0])


def test_gossip_round_rejects_missing_edge():
    params = [np.zeros(1) for _ in range(4)]
    with pytest.raises(ProtocolError):
        gossip_round(params, [(2, 3)], 0)


@settings(max_examples=50, deadline=None)
@given(
    n=st.integers(min_value=2, max_value=7),
    rounds=st.integers(min_value=1, max_value=6),
    seed=st.integers(min_value=0, max_value=2 ** 32 - 1),
)
def test_gossip_conserves_mean_and_never_increases_spread(n, rounds, seed):
    rng = np.random.default_rng(seed)
    params = [rng.integers(-64, 64, size=3).astype(np.float64) for _ in range(n)]
    mean = gather_sum(params) / n
    graph = ring_graph(n)
    previous = spread(params)
    for round_index in range(rounds):
        params = gossip_round(params, graph, round_index)
        current = spread(params)
        assert current <= previous + 1e-12
        previous = current
        np.testing.assert_allclose(gather_sum(params) / n, mean, atol=1e-9)


def test_gossip_finalize_makes_replicas_identical():
    params = [np.array([1.0, 5.0]), np.array([3.0, 7.0]), np.array([2.0, 0.0])]
    final = gossip_finalize(params)
    assert max_pairwise_distance(final) == 0.0
    np.testing.assert_allclose(final[0], [2.0, 4.0])


@pytest.mark.parametrize('n', [2, 3, 4])
def test_gossip_exchange_matches_in_memory_round(n):
    rng = np.random.default_rng(n)
    params = [rng.normal(size=5) for _ in range(n)]
    transport = Transport(n, 'thread', recv_timeout=30)
    for round_index in range(3):
        expected = gossip_round(params, ring_graph(n), round_index)
        params = run_workers(n, lambda w: gossip_exchange(params[w.rank], w, round_index, transport))
        for got, want in zip(params, expected):
            np.testing.assert_array_equal(got, want)

    before = transport.stats()
    final = run_workers(n, lambda w: gossip_finalize_exchange(params[w.rank], w, transport))
    assert max_pairwise_distance(final) == 0.0
    assert (transport.stats() - before).messages == 2 * (n - 1)
