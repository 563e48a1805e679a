#!/usr/bin/env python3
"""Smoke test for the scout_py extension module.

Builds nothing itself: run `cargo build -p scout-py` first, then
`python3 python/smoke_test.py`. The script locates the compiled cdylib,
imports it under the importable name, and exercises the bound surface
against the bundled classifieds-mini fixture.
"""

import json
import shutil
import sys
import tempfile
from pathlib import Path

REPO = Path(__file__).resolve().parent.parent


def locate_extension() -> Path:
    candidates = []
    for profile in ("debug", "release"):
        for stem in ("libscout_py.so", "libscout_py.dylib", "scout_py.dll"):
            candidates.append(REPO / "target" / profile / stem)
    for path in candidates:
        if path.exists():
            return path
    sys.exit("scout_py cdylib not found; run `cargo build -p scout-py` first")


def import_module(tmp: Path):
    built = locate_extension()
    target = tmp / ("scout_py" + (".pyd" if built.suffix == ".dll" else ".so"))
    shutil.copyfile(built, target)
    sys.path.insert(0, str(tmp))
    import scout_py

    return scout_py


def main() -> None:
    with tempfile.TemporaryDirectory() as tmpdir:
        scout_py = import_module(Path(tmpdir))

        # Grammar: raw completions reduce to canonical commands.
        raw = "Let's go. In summary, the next action I will perform is ```click [1499]```"
        assert scout_py.parse_action(raw) == "click [1499]"
        assert scout_py.parse_command("CLICK  [ 9 ]") == "click [9]"
        assert scout_py.parse_command("type [81] [guitar] [1]") == "type [81] [guitar] [1]"
        try:
            scout_py.parse_command("definitely not an action")
        except ValueError:
            pass
        else:
            raise AssertionError("junk input should have raised ValueError")

        env_json = (REPO / "fixtures/f1/env.json").read_text()
        policy_json = (REPO / "fixtures/f1/policy.json").read_text()
        tasks = [
            json.loads(line)
            for line in (REPO / "fixtures/f1/tasks.jsonl").read_text().splitlines()
            if line.strip()
        ]

        # Session: deterministic stepping, replay, rewards.
        session = scout_py.Session(env_json)
        obs = session.reset()
        assert "[5] [textbox]" in obs and "[9] [link]" in obs, obs
        assert session.url() == "http://classifieds.test/"
        session.step("click [9]")
        assert session.url().endswith("/item/dark-guitar")
        session.step("click [33]")
        assert session.flags() == {"cart_count": "guitar"}
        assert session.evaluate(
            json.dumps({"type": "flag_equals", "flag": "cart_count", "value": "guitar"})
        )
        direct_hash = session.state_hash()
        session.replay(["click [9]", "click [33]"])
        assert session.state_hash() == direct_hash
        assert not session.terminated
        session.step("stop [done]")
        assert session.terminated and session.stop_answer == "done"

        # Episodes: greedy falls into the trap, search escapes it.
        trap = next(t for t in tasks if t["id"] == "t-trap")
        greedy = scout_py.run_episode(env_json, json.dumps(trap), policy_json, budget_c=0)
        search = scout_py.run_episode(env_json, json.dumps(trap), policy_json, budget_c=20)
        assert not greedy["success"], greedy
        assert search["success"], search
        assert search["actions"][0] == "click [9]"
        assert search["expansions"] > 0

        print("scout_py smoke test passed")


if __name__ == "__main__":
    main()
