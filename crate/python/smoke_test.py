"""Smoke test for the ffg extension module. Run with pytest or directly."""

import json

import ffg


def test_direct_links_finalize():
    chain = ffg.Chain(spacing=2, deposits=[100, 100, 100])
    g = chain.genesis
    c1 = chain.extend(g, 2)[-1]
    votes = [chain.vote(v, g, c1) for v in range(3)]
    b = chain.include(c1, votes)
    c2 = chain.extend(b, 1)[-1]
    votes = [chain.vote(v, c1, c2) for v in range(3)]
    chain.include(c2, votes)

    fin = chain.evaluate()
    assert fin.is_justified(c1) and fin.is_justified(c2)
    assert fin.is_finalized(c1)
    assert not fin.is_finalized(c2)
    assert (c1, 1) in fin.finalized()


def test_two_thirds_needed():
    chain = ffg.Chain(spacing=2, deposits=[100, 100, 101])
    g = chain.genesis
    c1 = chain.extend(g, 2)[-1]
    votes = [chain.vote(v, g, c1) for v in (0, 1)]
    chain.include(c1, votes)
    assert not chain.evaluate().is_justified(c1)


def test_slashing_conditions():
    kr = ffg.Keyring(3, [0, 1])
    root = "00" * 32
    a, b = "11" * 32, "22" * 32
    double = (kr.sign(0, root, a, 0, 2), kr.sign(0, root, b, 0, 2))
    assert ffg.check_pair(*double) == "I"
    outer = kr.sign(0, root, a, 0, 5)
    inner = kr.sign(0, b, a, 1, 3)
    assert ffg.check_pair(outer, inner) == "II"
    assert ffg.check_pair(kr.sign(0, root, a, 0, 1), kr.sign(0, a, b, 1, 2)) is None
    assert kr.verify(outer)
    assert ffg.Vote.from_json(outer.to_json()) == outer


def test_liveness_plan():
    chain = ffg.Chain(spacing=2, deposits=[100] * 4)
    tip = chain.extend(chain.genesis, 8)[-1]
    plan = chain.evaluate().liveness_plan()
    assert plan["source"] == (chain.genesis, 0)
    assert plan["target"][1] + 1 == plan["finalize_target"][1]
    assert chain.height(tip) == 8


def test_leak_epochs():
    assert ffg.epochs_to_supermajority(600, 400) == 3
    assert ffg.epochs_to_supermajority(500, 500) == 7


def test_scenarios_run_deterministically():
    cfg = ffg.ScenarioConfig.builtin("all_honest", seed=7)
    first, second = ffg.run(cfg), ffg.run(cfg)
    assert first.passed and first.digest == second.digest
    report = json.loads(first.to_json())
    assert report["config"]["seed"] == 7
    assert "all_honest" in ffg.builtin_names()

    attack = ffg.run(ffg.ScenarioConfig.builtin("dyn_attack_nostitch"))
    assert not attack.passed
    assert "safety" in attack.failed_checks()
    assert len(attack.conflicts) == 1
    audit = attack.audit()
    assert audit["violators"] == [] and not audit["meets_bound"]

    equivocation = ffg.run(ffg.ScenarioConfig.builtin("equivocation"))
    audit = equivocation.audit()
    assert audit["meets_bound"] and 3 * audit["weight"] >= audit["total"]
    again = ffg.RunReport.from_json(equivocation.to_json())
    assert again.digest == equivocation.digest


if __name__ == "__main__":
    for name, fn in sorted(globals().items()):
        if name.startswith("test_") and callable(fn):
            fn()
            print("ok", name)
