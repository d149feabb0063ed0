from jforms.config import parse_config
from jforms.suite import FAIL, PASS, SKIP, verify_suite


def test_subset_and_seed_change_keep_pass_pattern():
    statuses = []
    for seed in (0, 5):
        rep = verify_suite(parse_config({"seed": seed}), only=[1, 6, 11])
        statuses.append([c.status for c in rep.checks])
    assert statuses[0] == statuses[1]
    assert [statuses[0][i] for i in (0, 5, 10)] == [PASS] * 3
    assert statuses[0][1] == SKIP


def test_conjugated_config_reports_gap_evidence():
    cfg = parse_config({"J": {"type": "conjugated", "amplitude": 0.1, "seed": 3}})
    rep = verify_suite(cfg, only=[6])
    check = rep.checks[5]
    assert check.status != FAIL, check.values
    assert check.values["h_minus"] + check.values["h_plus"] == check.values["b2"]
    assert float(check.values["h_minus_evidence"]["gap_ratio"]) >= 1e2
    assert rep.to_dict(with_timing=False).keys() >= {"checks", "config_hash", "seed", "passed"}
