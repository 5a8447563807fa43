"""Smoke test for the stepforge extension module.

Build and install first, e.g. `maturin build -o dist && pip install dist/*.whl`
from crates/py, then run `python python/smoke_test.py`.
"""

import stepforge


def main() -> None:
    codes = [row["code"] for row in stepforge.taxonomy()]
    assert len(codes) == 14 and len(set(codes)) == 14, codes

    original = ["Compute the dose.", "Multiply by weight.", "Report the total."]
    corrupted = ["Compute the dose.", "Divide by weight.", "Report   the total."]
    assert stepforge.changed_steps(original, corrupted) == [2]
    assert stepforge.changed_steps(original, original) == []

    assert stepforge.similarity("abc", "abc") == 1.0
    assert stepforge.severity_level(0.8, "Critical") == "Critical"
    assert stepforge.severity_level(0.1, "Minor") == "Minor"

    assert stepforge.parse_judgment("+ - +", 3) == [False, True, False]
    assert stepforge.parse_judgment("+ -", 3) is None

    report = stepforge.step_metrics(
        [[False, False, True, True]],
        [[False, True, True, True]],
    )
    assert abs(report["prm_score"] - 11 / 15) < 1e-9, report

    trajectories = [
        ("q1", 0, "A", [0.9, 0.8]),
        ("q1", 1, "B", [0.2, 0.1]),
        ("q1", 2, "B", [0.3, 0.2]),
    ]
    best = stepforge.select_answers("bon", trajectories, 3, {"q1": "A"})
    assert best["selections"]["q1"]["answer"] == "A"
    assert best["accuracy"] == 1.0
    vote = stepforge.select_answers("sc", trajectories, 3)
    assert vote["selections"]["q1"]["answer"] == "B"

    try:
        stepforge.select_answers("vote", trajectories, 3)
    except ValueError:
        pass
    else:
        raise AssertionError("unknown strategy accepted")

    print(f"stepforge {stepforge.__version__}: smoke test passed")


if __name__ == "__main__":
    main()
