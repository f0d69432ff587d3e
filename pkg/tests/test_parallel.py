import functools
import math
import struct
import threading
import time
from collections import Counter, deque

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from mlmcmc.models import DelayHierarchy, DelayModelSpec, GaussianHierarchy
from mlmcmc.multilevel import BASE, LevelEstimate, merge_statistics, run_multilevel
from mlmcmc.parallel.layout import (Collector, Controller, Idle, LayoutConfig, Phonebook as PhonebookRole, Root,
                                    Worker, assign_roles, minimum_processes)
from mlmcmc.parallel.messages import (CANCELLED, CHAIN, COLLECTOR, DENSITY, EVAL_NONFINITE, EVAL_OK,
                                      NO_PROVIDER, OK, QOI, RESPONSES, SCHEMAS, Message, Tag, decode, encode,
                                      normalize, peek_header)
from mlmcmc.parallel.phonebook import Decision, Phonebook, SchedulerConfig, phonebook_handle, throttle_violations
from mlmcmc.parallel.roles import RuntimeSettings, collector_loop, worker_loop
from mlmcmc.parallel.runtime import run_runtime
from mlmcmc.parallel.trace import (TraceEvent, check_sequence_numbers, read_trace, reassignment_times,
                                   unanswered, write_trace)
from mlmcmc.parallel.transport import InProcessTransport

from toys import Scripted


# --- wire format ----------------------------------------------------------------------


def _field(code):
    if code == "i":
        return st.integers(-2**63, 2**63 - 1)
    if code == "f":
        return st.floats(allow_nan=False)
    if code == "v":
        return st.lists(st.floats(allow_nan=False), max_size=6).map(np.array)
    return st.lists(st.integers(-2**63, 2**63 - 1), max_size=6).map(lambda v: np.array(v, dtype=np.int64))


@st.composite
def messages(draw):
    tag = draw(st.sampled_from(list(Tag)))
    data = {name: draw(_field(code)) for name, code in SCHEMAS[tag]}
    return Message(tag, draw(st.integers(0, 10**6)), draw(st.integers(0, 10**6)),
                   draw(st.integers(0, 2**63)), normalize(tag, data))


@settings(max_examples=200, deadline=None)
@given(messages())
def test_wire_round_trip(msg):
    frame = encode(msg)
    back = decode(frame)
    assert (back.tag, back.sender, back.receiver, back.seq) == (msg.tag, msg.sender, msg.receiver, msg.seq)
    for name, _ in SCHEMAS[msg.tag]:
        np.testing.assert_array_equal(back[name], msg[name])
    assert peek_header(frame) == (msg.tag, msg.seq, msg.sender, msg.receiver)


def test_frame_prefix_layout():
    msg = Message(Tag.Shutdown, 3, 0, 42, normalize(Tag.Shutdown, {"reason": 1}))
    frame = encode(msg)
    length, tag, seq = struct.unpack_from("<IBQ", frame)
    assert length == len(frame) - 4 and tag == int(Tag.Shutdown) and seq == 42


def test_corrupt_frames_rejected():
    frame = encode(Message(Tag.Shutdown, 1, 0, 1, normalize(Tag.Shutdown, {})))
    with pytest.raises(ValueError):
        decode(frame + b"\x00")
    with pytest.raises(ValueError):
        normalize(Tag.Shutdown, {"bogus": 1})


def test_every_request_has_one_response():
    assert len(set(RESPONSES.values())) == len(RESPONSES)
    assert not set(RESPONSES) & set(RESPONSES.values())


# --- layout ---------------------------------------------------------------------------------


def test_minimal_layout():
    lay = assign_roles(4, LayoutConfig(1, group_size=1, collectors=[1]))
    assert lay.roles == {0: Root(), 1: PhonebookRole(), 2: Collector(0, 0), 3: Controller(0, 0, 0)}


def test_ten_processes_two_levels_groups_of_two():
    lay = assign_roles(10, LayoutConfig(2, group_size=2, collectors=[1, 1]))
    assert len(lay.groups) == 3
    assert [g.level for g in lay.groups] == [0, 0, 1]
    assert sum(isinstance(r, Idle) for r in lay.roles.values()) == 0
    assert all(isinstance(lay.roles[g.members[0]], Worker) for g in lay.groups)
    # one more process does not fill a group and stays in reserve
    lay11 = assign_roles(11, LayoutConfig(2, group_size=2, collectors=[1, 1]))
    assert len(lay11.groups) == 3 and isinstance(lay11.roles[10], Idle)


def test_too_few_processes_names_minimum():
    cfg = LayoutConfig(2, group_size=4, collectors=[1, 1])
    with pytest.raises(ValueError, match=f"at least {minimum_processes(cfg)}"):
        assign_roles(6, cfg)


def test_each_worker_has_one_controller():
    lay = assign_roles(20, LayoutConfig(3, group_size=3, collectors=[2, 1, 1], initial_groups=[1, 2, 1]))
    seen = Counter(w for g in lay.groups for w in g.members)
    assert all(c == 1 for c in seen.values())
    assert [g.level for g in lay.groups] == [0, 1, 1, 2]
    assert sum(isinstance(r, Root) for r in lay.roles.values()) == 1
    assert sum(isinstance(r, PhonebookRole) for r in lay.roles.values()) == 1


def test_bad_initial_distribution():
    with pytest.raises(ValueError):
        assign_roles(8, LayoutConfig(2, initial_groups=[5, 5]))


# --- phonebook ---------------------------------------------------------------------------


def _msg(tag, sender, seq=1, **data):
    return Message(tag, sender, 1, seq, normalize(tag, data))


def _ready(pid, level, step=0, eligible=1, epoch=0, seq=1):
    return _msg(Tag.SampleReady, pid, seq, epoch=epoch, eligible=eligible, level=level, chain=0, step=step,
                theta=[float(step)], qoi=[float(step)])


def _book(groups_per_level, remote=False, **cfg):
    n = len(groups_per_level)
    lay = assign_roles(2 + n + sum(groups_per_level), LayoutConfig(n, initial_groups=groups_per_level))
    return lay, Phonebook(lay, n, remote, SchedulerConfig(**cfg))


def test_ready_then_request_matches_immediately():
    lay, book = _book([1, 1])
    c0 = lay.groups[0].controller
    out = book.handle(_ready(c0, 0, step=7), 0.0)
    assert out[0][1] == Tag.SampleClaimed
    out = book.handle(_msg(Tag.SampleRequest, 99, req_id=5, level=0, kind=CHAIN), 0.1)
    (to, tag, data), = out
    assert (to, tag, data["req_id"], data["step"], data["provider"]) == (99, Tag.SamplePayload, 5, 7, c0)
    assert book.ledger()[0]["ready"] == 0 and book.ledger()[0]["chain_requests"] == 0


def test_queued_chain_requests_show_overload():
    _, book = _book([1, 1], remote=True)
    for k in range(5):
        assert book.handle(_msg(Tag.SampleRequest, 50 + k, req_id=k, level=1, kind=CHAIN), 0.0) == []
    assert book.ledger()[1]["chain_requests"] == 5
    assert book.score(1) > book.score(0)


def test_chain_requests_outweigh_collector_requests():
    _, book = _book([1, 1])
    book.handle(_msg(Tag.SampleRequest, 50, req_id=1, level=0, kind=CHAIN), 0.0)
    book.handle(_msg(Tag.SampleRequest, 51, req_id=1, level=1, kind=COLLECTOR, remaining=5), 0.0)
    assert book.score(0) > book.score(1)


def test_unknown_level_gets_no_provider():
    _, book = _book([1])
    (to, tag, data), = book.handle(_msg(Tag.SampleRequest, 9, req_id=3, level=4, kind=CHAIN), 0.0)
    assert tag == Tag.SamplePayload and data["status"] == NO_PROVIDER and data["req_id"] == 3


def test_ineligible_samples_only_serve_collectors():
    lay, book = _book([1])
    c0 = lay.groups[0].controller
    book.handle(_ready(c0, 0, step=1, eligible=0), 0.0)
    assert book.handle(_msg(Tag.SampleRequest, 60, req_id=1, level=0, kind=CHAIN), 0.0) == []
    (to, tag, data), = book.handle(_msg(Tag.SampleRequest, 61, req_id=1, level=0, kind=COLLECTOR), 0.0)
    assert to == 61 and data["step"] == 1


def test_runtime_moving_average():
    lay, book = _book([1], ema_alpha=0.3)
    c0 = lay.groups[0].controller
    book.handle(_msg(Tag.SampleRequest, 60, req_id=1, level=0, kind=COLLECTOR, remaining=9), 0.0)
    for k, t in enumerate([1.0, 1.5, 2.5]):
        book.handle(_msg(Tag.SampleRequest, 60, req_id=k + 2, level=0, kind=COLLECTOR, remaining=9), t)
        book.handle(_ready(c0, 0, step=k, seq=k + 1), t)
        if k == 0:
            assert book.levels[0].runtime is None      # no start time known yet
    assert book.levels[0].runtime == pytest.approx(0.3 * 1.0 + 0.7 * 0.5)


class _ReferenceLedger:
    """Plain re-statement of the local-mode matching rules."""

    def __init__(self, n):
        self.chain = [deque() for _ in range(n)]
        self.coll = [deque() for _ in range(n)]
        self.ready = [[] for _ in range(n)]

    def request(self, pid, req, level, kind):
        pool = self.ready[level]
        for i, (prov, elig, step) in enumerate(pool):
            if elig or kind == COLLECTOR:
                del pool[i]
                return (pid, req, step)
        (self.chain if kind == CHAIN else self.coll)[level].append((pid, req))
        return None

    def ready_(self, prov, level, step, elig):
        if elig and self.chain[level]:
            pid, req = self.chain[level].popleft()
            return (pid, req, step)
        if self.coll[level]:
            pid, req = self.coll[level].popleft()
            return (pid, req, step)
        self.ready[level].append((prov, elig, step))
        return None

    def counts(self):
        return [(len(c), len(k), len(r)) for c, k, r in zip(self.chain, self.coll, self.ready)]


@settings(max_examples=30, deadline=None)
@given(st.integers(0, 2**32 - 1))
def test_ledger_matches_reference_replay(seed):
    rng = np.random.default_rng(seed)
    lay, book = _book([2, 2], store_limit=10**6)
    ref = _ReferenceLedger(2)
    ctrls = [g.controller for g in lay.groups]
    seqs = Counter()
    for k in range(100):
        level = int(rng.integers(2))
        if rng.random() < 0.5:
            prov = ctrls[2 * level + int(rng.integers(2))]
            elig = int(rng.random() < 0.6)
            seqs[prov] += 1
            out = book.handle(_ready(prov, level, step=k, eligible=elig, seq=seqs[prov]), float(k))
            expect = ref.ready_(prov, level, k, elig)
        else:
            pid = 100 + int(rng.integers(5))
            kind = CHAIN if rng.random() < 0.5 else COLLECTOR
            out = book.handle(_msg(Tag.SampleRequest, pid, req_id=k, level=level, kind=kind, remaining=1), float(k))
            expect = ref.request(pid, k, level, kind)
        got = [(to, d["req_id"], d["step"]) for to, tag, d in out if tag == Tag.SamplePayload]
        assert got == ([expect] if expect else [])
        led = book.ledger()
        assert [(l["chain_requests"], l["collector_requests"], l["ready"]) for l in led] == ref.counts()


def _overloaded_book(runtime=None):
    # level 1: 10 queued chain requests; level 0: 3 unclaimed samples and 4 groups
    lay, book = _book([4, 1], remote=True, hysteresis=4.0)
    for k in range(10):
        book.handle(_msg(Tag.SampleRequest, 200 + k, req_id=1, level=1, kind=CHAIN), 0.0)
    for g in lay.groups[:3]:
        book.handle(_ready(g.controller, 0), 0.0)
    if runtime is not None:
        for ld in book.levels:
            ld.runtime = runtime
    return lay, book


def test_rebalance_moves_one_group_towards_demand():
    lay, book = _overloaded_book()
    assert book.ledger()[0]["ready"] == 3 and book.ledger()[0]["groups"] == 4
    out = book.rebalance(1.0)
    moves = [d for to, tag, d in out if tag == Tag.ReassignGroup]
    assert len(moves) == 1 and moves[0]["level"] == 1 and moves[0]["epoch"] == 1
    assert book.levels[0].groups == 3 and book.levels[1].groups == 2
    assert book.decisions == [Decision(1.0, book.decisions[0].group, 0, 1, 0.0)]


def test_rebalance_is_throttled_by_runtime():
    _, book = _overloaded_book(runtime=5.0)
    assert len(book.rebalance(10.0)) >= 1
    assert book.rebalance(10.001) == []
    assert book.rebalance(14.9) == []
    assert book.rebalance(15.1) != []


def test_balanced_ledger_stays_put():
    _, book = _book([2, 2], remote=True)
    assert book.rebalance(1.0) == []
    _, off = _overloaded_book()
    off.config.load_balancing = False
    assert off.rebalance(1.0) == []


def test_hysteresis_blocks_small_imbalance():
    lay, book = _book([2, 1], remote=True, hysteresis=4.0)
    book.handle(_msg(Tag.SampleRequest, 300, req_id=1, level=1, kind=CHAIN), 0.0)
    assert book.rebalance(1.0) == []      # score gap 2 < 4


def test_reassignment_cancels_queued_requests_of_the_group():
    lay, book = _book([2, 1], remote=True)
    fine = lay.groups[2].controller
    book.handle(_msg(Tag.SampleRequest, fine, req_id=8, level=0, kind=CHAIN, epoch=0), 0.0)
    out = book.reassign(lay.groups[2].group, 0, 1.0)
    cancels = [d for to, tag, d in out if tag == Tag.SamplePayload]
    assert cancels == [{"req_id": 8, "status": CANCELLED}]
    assert book.ledger()[0]["chain_requests"] == 0


_fresh_or_stale = st.lists(st.tuples(st.sampled_from(["ready", "request"]), st.booleans(), st.integers(0, 1)),
                           min_size=1, max_size=40)


@settings(max_examples=50, deadline=None)
@given(_fresh_or_stale)
def test_stale_epoch_messages_do_not_mutate_state(script):
    def fresh_book():
        lay, book = _book([2, 2], remote=False)
        for g in lay.groups:
            book.reassign(g.group, g.level, 0.0)     # every group now on epoch 1
        return lay, book

    lay, full = fresh_book()
    _, clean = fresh_book()
    ctrls = [g.controller for g in lay.groups]
    for k, (kind, stale, which) in enumerate(script):
        epoch = 0 if stale else 1
        g = lay.groups[2 * which + (k % 2)]
        if kind == "ready":
            m = _ready(g.controller, g.level, step=k, epoch=epoch, seq=k + 1)
        else:
            m = _msg(Tag.SampleRequest, ctrls[k % 4], k + 1, req_id=k, level=which, kind=CHAIN, epoch=epoch)
        before = full.ledger()
        out = full.handle(m, float(k))
        if stale:
            assert full.ledger() == before
            assert all(tag == Tag.SampleClaimed or d.get("status") == CANCELLED for _, tag, d in out)
        else:
            assert out == clean.handle(m, float(k))
        assert full.ledger() == clean.ledger()


def test_functional_wrapper():
    lay, book = _book([1])
    b2, out = phonebook_handle(book, _ready(lay.groups[0].controller, 0), 0.0)
    assert b2 is book and out[0][1] == Tag.SampleClaimed


def test_throttle_violations():
    rows = [(0.0, 1, 0, 1, 2.0), (1.0, 1, 1, 0, 2.0), (1.5, 2, 0, 1, 0.5), (5.0, 1, 0, 1, 2.0)]
    assert throttle_violations(rows) == [(1, 1.0, 2.0)]
    assert throttle_violations([Decision(*r) for r in rows]) == [(1, 1.0, 2.0)]
    assert throttle_violations([]) == []


# --- trace audits -----------------------------------------------------------------------------


def test_trace_audits_and_round_trip(tmp_path):
    ev = [TraceEvent(1, 2, 1, "SampleRequest", 1), TraceEvent(2, 1, 2, "SamplePayload", 1),
          TraceEvent(3, 2, 1, "SampleRequest", 2), TraceEvent(4, 1, 5, "ReassignGroup", 1),
          TraceEvent(5, 2, 1, "SampleRequest", 2)]
    assert [e.timestamp_ns for e in unanswered(ev, "SampleRequest", "SamplePayload")] == [3, 5]
    assert check_sequence_numbers(ev) == ["seq 2 after 2 on (2, 1)"]
    assert reassignment_times(ev) == {5: [4]}
    write_trace(tmp_path / "t.csv", ev)
    assert read_trace(tmp_path / "t.csv") == ev
    assert (tmp_path / "t.csv").read_text().splitlines()[0] == "timestamp_ns,sender,receiver,tag,seq"


# --- single roles -------------------------------------------------------------------------------


def _serve(target, *args):
    res = {}
    th = threading.Thread(target=lambda: res.setdefault("rc", target(*args)), daemon=True)
    th.start()
    return th, res


def test_worker_is_deterministic_and_stops_cleanly():
    t = InProcessTransport(2)
    ctrl = t.endpoint(0)
    th, res = _serve(worker_loop, t.endpoint(1), GaussianHierarchy.identical(2, dim=2))
    theta = np.array([0.3, -1.1])
    vals = []
    for k in range(2):
        ctrl.send(1, Tag.EvaluateDensity, eval_id=k, level=1, what=DENSITY, theta=theta)
        vals.append(ctrl.recv(timeout=5))
    assert vals[0]["value"][0] == vals[1]["value"][0] and vals[0]["error"] == EVAL_OK
    ctrl.send(1, Tag.EvaluateDensity, eval_id=9, level=0, what=QOI, theta=theta)
    np.testing.assert_array_equal(ctrl.recv(timeout=5)["value"], theta)
    ctrl.send(1, Tag.Shutdown)
    th.join(5)
    assert res["rc"] == 0


def test_worker_marks_nonfinite_densities():
    class Nan(GaussianHierarchy):
        def sampling_problem(self, level, comm=None):
            return Scripted({}, default=math.nan)

    t = InProcessTransport(2)
    th, _ = _serve(worker_loop, t.endpoint(1), Nan.identical(1))
    t.endpoint(0).send(1, Tag.EvaluateDensity, eval_id=1, level=0, what=DENSITY, theta=[0.0])
    assert t.endpoint(0).recv(timeout=5)["error"] == EVAL_NONFINITE
    t.endpoint(0).send(1, Tag.Shutdown)
    th.join(5)


def test_worker_delay_spacing():
    t = InProcessTransport(2)
    f = DelayHierarchy(DelayModelSpec([0.05], jitter=0.0))
    th, _ = _serve(worker_loop, t.endpoint(1), f)
    ctrl = t.endpoint(0)
    for k in range(6):
        ctrl.send(1, Tag.EvaluateDensity, eval_id=k, level=0, what=DENSITY, theta=[0.0])
    stamps = []
    for _ in range(6):
        ctrl.recv(timeout=5)
        stamps.append(time.monotonic())
    ctrl.send(1, Tag.Shutdown)
    th.join(5)
    assert min(np.diff(stamps)) >= 0.045   # receive-side clock; the worker sleeps 50 ms each time


def _collector_run(quotas, stream, window=4):
    """Collectors on pids 2.. fed by a scripted phonebook that hands out
    ``stream`` in request order; returns the CollectedStats messages."""
    n = len(quotas)
    t = InProcessTransport(2 + n)
    s = RuntimeSettings(1, [sum(quotas)], [0], collector_window=window)
    threads = [_serve(collector_loop, t.endpoint(2 + k), s)[0] for k in range(n)]
    root, pb = t.endpoint(0), t.endpoint(1)
    for k, q in enumerate(quotas):
        root.send(2 + k, Tag.CollectRequest, level=0, shard=k, quota=q)
    it = iter(stream)
    stats = {}
    while len(stats) < n:
        m = pb.recv(timeout=0.01)
        if m is not None:
            x = next(it)
            pb.send(m.sender, Tag.SamplePayload, req_id=m["req_id"], status=OK, level=0, theta=[x], qoi=[x])
        m = root.recv(timeout=0.0001)
        while m is not None:
            stats[m.sender] = m
            m = root.recv(timeout=0.0001)
    for k in range(n):
        root.send(2 + k, Tag.Shutdown)
    for th in threads:
        th.join(5)
    return [stats[2 + k] for k in range(n)]


def test_two_collectors_merge_to_total():
    stream = np.random.default_rng(0).standard_normal(200)
    a, b = _collector_run([30, 70], stream)
    assert (a["count"], b["count"]) == (30, 70)
    ea = LevelEstimate(0, BASE, a["count"], a["mean"], a["m2"])
    eb = LevelEstimate(0, BASE, b["count"], b["mean"], b["m2"])
    m = merge_statistics(ea, eb)
    assert m.count == 100
    # oracle: one collector on the same recorded stream
    single, = _collector_run([100], stream)
    np.testing.assert_allclose(m.mean, single["mean"], rtol=1e-10)
    np.testing.assert_allclose(m.m2, single["m2"], rtol=1e-10)
    np.testing.assert_allclose(single["mean"], [stream[:100].mean()], rtol=1e-10)


def test_zero_quota_collector_is_immediately_final():
    s, = _collector_run([0], [])
    assert s["complete"] == 1 and s["count"] == 0


# --- whole runtime --------------------------------------------------------------------------------


def _settings(samples, burn_in=None, mode="local", **kw):
    n = len(samples)
    return RuntimeSettings(n, list(samples), list(burn_in or [0] * n), mode=mode, **kw)


def test_controller_announces_each_sample_once():
    s = _settings([10], burn_in=[5])
    out = run_runtime(lambda: GaussianHierarchy.identical(1), s, LayoutConfig(1, group_size=2))
    assert out.status == 0
    assert sum(e.tag == "SampleReady" for e in out.trace) == 10
    assert out.root.levels[0].rows.shape[0] == 10


def test_group_evaluations_run_in_lock_step():
    s = _settings([15], burn_in=[3])
    out = run_runtime(lambda: GaussianHierarchy.identical(1), s, LayoutConfig(1, group_size=4))
    assert out.status == 0
    ctrl = out.layout.groups[0].controller
    workers = set(out.layout.groups[0].members)
    sent = got = rounds = 0
    for e in out.trace:
        if e.tag == "EvaluateDensity" and e.sender == ctrl:
            assert got == 0 or got == len(workers)
            if got == len(workers):
                sent = got = 0
            sent += 1
            rounds += 1
        elif e.tag == "DensityResult" and e.receiver == ctrl:
            assert e.sender in workers
            assert sent == len(workers), "a result arrived before the request reached every worker"
            got += 1
    assert rounds >= 3 * (15 + 3)


def test_local_runtime_reproduces_sequential_sampler():
    f = GaussianHierarchy.converging(3, [1.0, -0.5], subsampling=[4, 2])
    s = _settings([200, 40, 10], burn_in=[20, 5, 2], coarse_burn_in=10, seed=5)
    out = run_runtime(lambda: f, s, LayoutConfig(3))
    seq = run_multilevel(f, [200, 40, 10], burn_in=[20, 5, 2], coarse_burn_in=10, seed=5)
    for lo, rec in zip(out.root.levels, seq.levels):
        np.testing.assert_array_equal(lo.rows[:, 3:5], rec.positions)
        np.testing.assert_array_equal(lo.rows[:, 2], rec.accepted)
        if lo.level:
            np.testing.assert_array_equal(lo.rows[:, 7:9], rec.coarse_qoi)
    # the runtime counts per model level, the sequential driver per chain (stack included)
    assert out.root.evaluations.sum() == sum(r.model_evaluations for r in seq.levels)


def _builder_gaussian():
    return GaussianHierarchy.converging(2, [1.0], subsampling=[3])


def test_socket_transport_matches_inprocess():
    s = _settings([60, 12], burn_in=[5, 2], seed=2)
    a = run_runtime(_builder_gaussian, s, LayoutConfig(2), transport="socket")
    b = run_runtime(_builder_gaussian, s, LayoutConfig(2), wire_check=True)
    assert a.status == b.status == 0
    for la, lb in zip(a.root.levels, b.root.levels):
        np.testing.assert_array_equal(la.rows, lb.rows)
    assert check_sequence_numbers(a.trace) == []


def _audit(out):
    assert check_sequence_numbers(out.trace) == []
    for req, resp in RESPONSES.items():
        assert unanswered(out.trace, req.name, resp.name) == [], req.name


def _delay_builder(runtimes):
    return DelayHierarchy(DelayModelSpec(runtimes, jitter=0.1), subsampling=[2, 1], proposal_cov=2.0)


def test_reassignments_lose_and_duplicate_nothing():
    s = _settings([120, 30, 6], burn_in=[5, 2, 1], mode="remote", seed=1,
                  scheduler=SchedulerConfig(hysteresis=2.0))
    cfg = LayoutConfig(3, groups=6, initial_groups=[4, 1, 1])
    out = run_runtime(functools.partial(_delay_builder, [0.001, 0.005, 0.02]), s, cfg)
    assert out.status == 0
    assert len(out.root.decisions) >= 1
    _audit(out)
    for lo, n in zip(out.root.levels, [120, 30, 6]):
        assert lo.rows.shape[0] == n and lo.complete
        keys = {(int(r[0]), int(r[1])) for r in lo.rows}
        assert len(keys) == n
    # every reassignment in the trace is a recorded decision
    assert sum(len(v) for v in reassignment_times(out.trace).values()) == len(out.root.decisions)
    assert throttle_violations(out.root.decisions) == []


@pytest.mark.parametrize("initial", [[3, 0, 0], [0, 0, 3], [1, 1, 1]])
def test_scheduler_liveness_for_any_initial_distribution(initial):
    s = _settings([20, 5, 2], burn_in=[2, 1, 0], mode="remote", seed=3, timeout=60.0)
    cfg = LayoutConfig(3, groups=3, initial_groups=initial)
    out = run_runtime(functools.partial(_delay_builder, [0.001, 0.01, 0.1]), s, cfg)
    assert out.status == 0
    assert out.root.levels[2].rows.shape[0] == 2
    _audit(out)


def test_inferred_runtime_ratio():
    s = _settings([50, 50], mode="local", seed=0)
    f = DelayHierarchy(DelayModelSpec([0.005, 0.05]), proposal_cov=2.0)
    out = run_runtime(lambda: f, s, LayoutConfig(2))
    assert out.status == 0
    r0, r1 = out.root.runtimes
    assert 5.0 <= r1 / r0 <= 20.0


def test_two_collector_shards_in_a_run():
    s = _settings([100], seed=4)
    out = run_runtime(lambda: GaussianHierarchy.identical(1), s, LayoutConfig(1, collectors=[2], groups=2))
    assert out.status == 0
    lo = out.root.levels[0]
    assert lo.estimate.count == 100 and lo.rows.shape[0] == 100
    np.testing.assert_allclose(lo.estimate.mean, lo.rows[:, 4:5].mean(axis=0), rtol=1e-10)


def test_timeout_reports_incomplete():
    s = _settings([50], timeout=0.5)
    f = DelayHierarchy(DelayModelSpec([0.05], jitter=0.0))
    out = run_runtime(lambda: f, s, LayoutConfig(1))
    assert out.status == 4
    assert not out.root.levels[0].complete
    assert 0 < out.root.levels[0].rows.shape[0] < 50


def test_model_failure_is_a_role_failure():
    class Broken(GaussianHierarchy):
        def sampling_problem(self, level, comm=None):
            if comm is not None and level == 0:
                raise RuntimeError("model set-up failed")
            return super().sampling_problem(level, comm)

    out = run_runtime(lambda: Broken.identical(1), _settings([10], timeout=20.0), LayoutConfig(1, group_size=2))
    assert out.status == 3 and out.root.failure
