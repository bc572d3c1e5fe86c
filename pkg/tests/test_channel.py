import random

import pytest

from ftrk import channel
from ftrk.chain import ChainPolicy
from ftrk.channel import (
    AdversaryAction,
    CostModel,
    Drop,
    FlipBit,
    QueueTransport,
    Replay,
    SwapChains,
    inject_adversary,
    parties_from_setup,
    record_offsets,
    run_baseline_flow,
    run_direct_flow,
)
from ftrk.frame import HEADER, decode_frame
from ftrk.handshake import ModeError, RolePair
from ftrk.pipeline import StageTiming

BASELINE_STAGES = ["user.enc", "wire", "proxy.dec", "proxy.auth", "proxy.enc", "proxy.mac", "wire",
                   "accel.dec", "accel.auth"]
DIRECT_STAGES = ["user.enc", "wire", "proxy.forward", "wire", "accel.dec", "accel.auth"]
HOPS = ["user->proxy", "proxy->accel"]


def _items(seed, n=4, size=600):
    r = random.Random(seed)
    return [r.randbytes(size) for _ in range(n)]


@pytest.fixture(scope="module")
def setups():
    from ftrk.handshake import HandshakeParty, Role, establish_three_party, make_rng

    def make(mode):
        return establish_three_party(HandshakeParty(Role.USER), HandshakeParty(Role.PROXY),
                                     HandshakeParty(Role.ACCELERATOR), mode, make_rng(f"channel-{mode}"))

    return {"baseline": make("baseline"), "direct": make("direct")}


def test_baseline_stage_list(setups):
    t = inject_adversary("baseline", setups["baseline"], _items(1), [])
    assert t.stage_names == BASELINE_STAGES
    assert t.outcome == "ok"
    assert t.exposed_roles() == {"user", "proxy", "accel"}


def test_direct_stage_list(setups):
    t = inject_adversary("direct", setups["direct"], _items(2), [], ChainPolicy(16))
    assert t.stage_names == DIRECT_STAGES
    assert t.outcome == "ok"
    assert t.crypto_stages("proxy") == []
    assert t.exposed_roles() == {"user", "accel"}


def test_direct_exposure_ledger_over_100_batches(setups):
    r = random.Random(100)
    for i in range(100):
        items = [r.randbytes(r.randrange(0, 2000)) for _ in range(r.randrange(0, 5))]
        t = inject_adversary("direct", setups["direct"], items, [], ChainPolicy(r.choice([1, 2, 16])))
        assert t.outcome == "ok", t.dump()
        assert t.delivered == items
        assert not t.exposure.get("proxy")


@pytest.mark.parametrize("seed", range(3))
def test_flows_deliver_the_same_result(setups, seed):
    items = _items(seed, n=5, size=3000)
    base = inject_adversary("baseline", setups["baseline"], items, [])
    direct = inject_adversary("direct", setups["direct"], items, [], ChainPolicy(16))
    assert base.delivered == direct.delivered == items
    assert base.accel_result() == direct.accel_result()


@pytest.mark.parametrize("mode", ["baseline", "direct"])
def test_empty_batch(setups, mode):
    t = inject_adversary(mode, setups[mode], [], [])
    assert t.outcome == "ok" and t.delivered == []


ATTACKS = [
    ("baseline", FlipBit(8 * 40 + 3)),
    ("baseline", Replay()),
    ("baseline", Drop()),
    ("direct", FlipBit(8 * 40 + 3)),
    ("direct", SwapChains(4, 7)),
    ("direct", Replay()),
    ("direct", Drop()),
]


@pytest.mark.parametrize("hop", HOPS)
@pytest.mark.parametrize("mode,kind", ATTACKS)
@pytest.mark.parametrize("target", [0, 2])
def test_every_attack_is_caught(three_party, mode, kind, hop, target):
    items = _items(7)
    t = inject_adversary(mode, three_party(mode), items, [AdversaryAction(kind, hop, target)], ChainPolicy(16),
                         timeout=0.2)
    assert t.adversary_log, "action never fired"
    assert t.outcome in ("rejected", "timeout"), t.dump()
    assert t.delivered == []
    assert not t.completed
    assert t.aborts


def test_replay_is_named(three_party):
    t = inject_adversary("direct", three_party("direct"), _items(8), [AdversaryAction(Replay(), "proxy->accel", 1)])
    assert [r.error for r in t.rejections] == ["ReplayDetected"]


def test_swap_is_named_as_reorder(three_party):
    t = inject_adversary("direct", three_party("direct"), _items(9), [AdversaryAction(SwapChains(4, 7))])
    assert t.rejections[0].error == "ReorderDetected"
    assert t.rejections[0].role == "accel"


def test_serial_flip_located_by_record_offsets(three_party):
    setup = three_party("direct")
    sk = setup.rings[channel.Role.USER].get(RolePair.USER_ACCEL)
    _, env = sk.seal_multichain(bytes(600), ChainPolicy(16))
    sample = channel.encode_frame(channel.Frame(channel.MsgType.DATA, sk.session_id, 0, env.records, 600))
    offs = record_offsets(sample)
    assert len(offs) == 16 and offs[0]["serial"] == HEADER.size
    assert decode_frame(sample).records[3].serial == sample[offs[3]["serial"]]
    # flipping the low bit of serial 2 turns it into 3: a relabel, not a reorder
    flip = FlipBit(8 * offs[2]["serial"] + 7)
    t = inject_adversary("direct", setup, [bytes(600)], [AdversaryAction(flip)], ChainPolicy(16))
    assert t.rejections[0].error == "ChainAuthFailure"
    assert "2" in t.rejections[0].detail


def test_baseline_proxy_rejection_aborts_downstream(three_party):
    t = inject_adversary("baseline", three_party("baseline"), _items(10),
                         [AdversaryAction(FlipBit(8 * 40), "user->proxy", 0)])
    assert t.rejections[0].role == "proxy"
    assert any(who == "accel" for who, _ in t.aborts)
    assert not t.exposure.get("accel")


def test_swap_needs_multiple_chains(setups):
    with pytest.raises(ValueError):
        inject_adversary("baseline", setups["baseline"], _items(11), [AdversaryAction(SwapChains(0, 1))])
    with pytest.raises(ValueError):
        inject_adversary("direct", setups["direct"], _items(11), [AdversaryAction(SwapChains(3, 3))])
    with pytest.raises(ValueError):
        inject_adversary("direct", setups["direct"], _items(11), [AdversaryAction(Drop(), "proxy->user")])


def test_direct_flow_refuses_baseline_setup(setups):
    parties = parties_from_setup(setups["baseline"], QueueTransport())
    with pytest.raises(ModeError):
        run_direct_flow(parties, _items(12))


def test_baseline_flow_does_not_need_user_accel(setups):
    parties = parties_from_setup(setups["baseline"], QueueTransport())
    assert run_baseline_flow(parties, _items(13)).outcome == "ok"


@pytest.mark.parametrize("mode", ["baseline", "direct"])
def test_tcp_transport(setups, mode):
    transport = channel.TcpTransport()
    try:
        items = _items(14, n=3, size=5000)
        t = inject_adversary(mode, setups[mode], items, [], ChainPolicy(16), transport, timeout=2.0)
    finally:
        transport.close()
    assert t.outcome == "ok", t.dump()
    assert t.delivered == items


def test_tcp_transport_under_attack(three_party):
    transport = channel.TcpTransport()
    try:
        t = inject_adversary("direct", three_party("direct"), _items(15), [AdversaryAction(FlipBit(8 * 40 + 3))],
                             ChainPolicy(16), transport, timeout=1.0)
    finally:
        transport.close()
    assert t.outcome == "rejected" and t.delivered == []


def test_cost_model_scales_and_divides_auth():
    timing = StageTiming(cpu_enc=10, cpu_mac=2, cpu_dec=10, cpu_auth=4, transfer=8, keystream=9, xor_dec=1,
                         gpu_auth=16, compute=100)
    costs = CostModel.from_timing(timing, 1000)
    assert costs.duration("wire", 500) == pytest.approx(4)
    assert costs.duration("accel.auth", 1000, n_chains=16) == pytest.approx(1)
    assert costs.duration("accel.auth", 1000, n_chains=64) == pytest.approx(1)
    gp = CostModel.from_timing(timing, 1000, gpu_preprocess=True, preprocess_us=3.0)
    assert gp.duration("wire", 1000) == pytest.approx(8 / 5)
    assert gp.duration("accel.preprocess", 1) == 3.0
    with pytest.raises(ValueError):
        CostModel.from_timing(timing, 0)


def test_gpu_preprocess_stage_appears(three_party):
    costs = CostModel(dict(channel.DEFAULT_COSTS.us_per_byte), gpu_preprocess=True, preprocess_us=5.0)
    parties = parties_from_setup(three_party("direct"), QueueTransport())
    t = run_direct_flow(parties, _items(16), ChainPolicy(16), costs)
    assert t.stage_names[-1] == "accel.preprocess"


def test_dump_mentions_outcome(three_party):
    t = inject_adversary("direct", three_party("direct"), _items(17), [AdversaryAction(Drop())], timeout=0.1)
    text = t.dump()
    assert "outcome: timeout" in text and "adversary: drop" in text


def test_aborted_session_stays_closed(three_party):
    # the receiver never skips a missing batch id, so the session must be re-keyed
    setup = three_party("direct")
    t = inject_adversary("direct", setup, _items(18), [AdversaryAction(Drop(), "user->proxy", 0)], timeout=0.1)
    assert t.outcome == "timeout"
    again = inject_adversary("direct", setup, _items(19), [], timeout=0.1)
    assert again.outcome == "timeout" and again.delivered == []
    fresh = inject_adversary("direct", three_party("direct"), _items(19), [])
    assert fresh.outcome == "ok"
