"""Smoke test for the `stair` extension module."""

import pathlib
import tempfile

import stair

FIG4 = """
nodes = ["0:1", "1:1", "2:1", "3:1000", "4:2000"]
observers = [9]
max_ticks = 300
"""


def main():
    powers = [stair.validating_power(s) for s in (0, 1, 999, 1000, 1001, 1999, 2000, 2500)]
    assert powers == [0, 1, 1, 1000, 1000, 1000, 2000, 2000], powers
    assert stair.daily_block_reward_cents(0) == 68_242_546
    assert stair.daily_block_reward_cents(1460) == 0

    ledger = stair.Ledger()
    ledger.open_account(1, 1000)
    ledger.open_account(2, 500)
    ledger.delegate(2, 1, 500, 7)
    assert ledger.role(1) == "Validator" and ledger.power(1) == 1000
    try:
        ledger.delegate(2, 1, 1, 7)
    except ValueError:
        pass
    else:
        raise AssertionError("over-delegation accepted")

    cs = stair.Consensus([1, 1000])
    u, v = cs.add(0, []), cs.add(1, [])
    b = cs.add(0, [v])
    assert cs.frame_of(u) == 0 and cs.is_root(u)
    assert cs.frame_of(b) is not None

    result = stair.run(FIG4, ["seed=3"])
    assert result.ok, result.violations
    assert result.finalized > 0
    assert result.log(0) == result.log(4)
    assert result.report() == stair.run(FIG4, ["seed=3"]).report()
    clean, text = result.audit()
    assert clean, text

    with tempfile.TemporaryDirectory() as d:
        out = pathlib.Path(d) / "run"
        result.write_dir(str(out))
        clean, _ = stair.audit_dir(str(out))
        assert clean
    print(f"smoke ok: {result.finalized} blocks finalized")


if __name__ == "__main__":
    main()
