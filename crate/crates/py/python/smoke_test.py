"""Smoke test for the async_explore extension module."""

import json
import math
import tempfile

import async_explore as ae


def main():
    assert abs(ae.compression_ratio(25, 5) - 0.977142857) < 1e-9
    assert abs(ae.compression_ratio(15, 5) - 0.936507936) < 1e-9

    rows = ae.generate_map(15, 3).splitlines()
    assert len(rows) == 15 and all(len(r) == 15 for r in rows)
    assert ae.acs([(0.0, 0.0), (1.0, 0.5)], 3.0) == 1.0
    assert ae.aggregate_stats([0.0, 10.0]) == (5.0, 5.0)
    assert "nearest" in ae.planner_names()

    cfg = json.loads(ae.experiment_config('{"episodes": 4, "seed": 7}'))
    assert cfg["decider"]["planner"] == "nearest"
    results, episodes = ae.run(json.dumps(cfg))
    assert results.episodes == 4 and len(episodes) == 4
    assert results.coverage_mean == 1.0
    ep = episodes[0]
    assert ep.map == ae.generate_map(15, 7, 0).splitlines()
    again = ae.Episode.from_jsonl(ep.to_jsonl())
    assert again.to_jsonl() == ep.to_jsonl()
    frames = ep.frames(every=50)
    assert frames[0].count("\n") == 15
    assert math.isclose(sum(ep.rewards()), sum(again.rewards()))

    sync = dict(cfg, mode="sync")
    table = ae.compare([json.dumps(cfg), json.dumps(sync)])
    assert [r.mode for r in table] == ["async", "sync"]
    try:
        ae.compare([json.dumps(cfg), json.dumps(dict(cfg, map_size=25))])
    except ValueError as e:
        assert "not comparable" in str(e)
    else:
        raise AssertionError("mismatched configs were accepted")

    with tempfile.TemporaryDirectory() as d:
        batches, steps = ae.train(
            json.dumps({"seed": 1, "step_max": 40, "episodes_per_batch": 2, "eval_every": 0}), d
        )
        assert batches >= 1 and steps >= 40
        policy = ae.Policy.load(d + "/policy.bin")
        assert policy.param_count == ae.Policy.init().param_count
        pol_cfg = dict(cfg, decider={"kind": "policy", "checkpoint": d + "/policy.bin"})
        results, _ = ae.run(json.dumps(pol_cfg), d + "/eval")
        assert results.planner == "mcp"

    print("smoke test passed:", results)


if __name__ == "__main__":
    main()
