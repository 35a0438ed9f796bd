import pytest

from agentinfer.config import (
    ConfigError,
    ScenarioConfig,
    apply_overrides,
    describe_keys,
    from_dict,
    load,
    parse_override,
    to_dict,
)


def test_defaults_round_trip():
    cfg = from_dict({})
    assert cfg == ScenarioConfig()
    assert from_dict(to_dict(cfg)) == cfg


@pytest.mark.parametrize(
    "data,path",
    [
        ({"pool": {"bogus": 1}}, "pool.bogus"),
        ({"pool": {"N": "many"}}, "pool.N"),
        ({"pool": {"N": 0}}, "pool.N"),
        ({"sched": {"policy": "lifo"}}, "sched.policy"),
        ({"latency": {"tools": {"rank": {"mean": -1.0}}}}, "latency.tools.rank"),
        ({"seeds": ["a"]}, "seeds[0]"),
        ({"scenario": "nope"}, "scenario"),
    ],
)
def test_errors_carry_dotted_path(data, path):
    with pytest.raises(ConfigError) as exc:
        from_dict(data)
    assert exc.value.path.startswith(path)
    assert path in str(exc.value)


def test_bool_is_not_an_int():
    with pytest.raises(ConfigError):
        from_dict({"pool": {"N": True}})


def test_int_accepted_for_float():
    assert from_dict({"sched": {"k": 3}}).sched.k == 3.0


def test_overrides():
    assert parse_override("pool.N=128") == (["pool", "N"], 128)
    assert parse_override("spec.build=async") == (["spec", "build"], "async")
    data = apply_overrides({"pool": {"tpb": 8}}, ["pool.N=64", "collab.enabled=true"])
    cfg = from_dict(data)
    assert (cfg.pool.N, cfg.pool.tpb, cfg.collab.enabled) == (64, 8, True)
    for bad in ("noequals", "a..b=1"):
        with pytest.raises(ConfigError):
            parse_override(bad)
    with pytest.raises(ConfigError):
        apply_overrides({"seed": 1}, ["seed.x=2"])


def test_load_file_with_overrides_and_seed(tmp_path):
    p = tmp_path / "c.yaml"
    p.write_text("scenario: compress\npool:\n  N: 500\n")
    cfg = load(p, ["pool.tpb=32"], seed=9)
    assert (cfg.scenario, cfg.pool.N, cfg.pool.tpb, cfg.seed) == ("compress", 500, 32, 9)
    with pytest.raises(ConfigError):
        load(tmp_path / "missing.yaml")
    p.write_text("- a list\n")
    with pytest.raises(ConfigError):
        load(p)


def test_replace_copies():
    cfg = ScenarioConfig()
    other = cfg.replace(sched={"policy": "sjf"}, seed=4)
    assert other.sched.policy == "sjf" and other.seed == 4
    assert cfg == ScenarioConfig()
    assert other.pool == cfg.pool


def test_describe_keys_lists_leaves():
    keys = dict(describe_keys())
    assert keys["pool.N"] == 8192
    assert "latency.tools.document_qa.mean" in keys
    assert "sched.policy" in keys and "spec.build" in keys
    assert not any(isinstance(v, dict) for v in keys.values())
