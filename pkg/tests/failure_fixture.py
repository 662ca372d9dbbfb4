"""The 108-case failure fixture with a frozen per-category distribution.

style          108 cases (72 high / 36 medium): verbose 78, robotic 25, cold 5
clarification   97 cases (64 high / 33 medium): over 59, under 31, wrong_focus 7
knowledge       76 cases (48 high / 28 medium): missing 48, not_surfaced 19, incorrect 13
tool            59 cases (43 high / 16 medium): missed_call 34, tool_missing 21, wrong_params 4
"""

from __future__ import annotations

from skillforge.analyzer import FailureRecord, record_from_severities

N_CASES = 108

# (dimension, member count, high count, [(issue, first, last_exclusive), ...])
LAYOUT = {
    "style": (108, 72, [("verbose", 0, 78), ("robotic", 78, 103), ("cold", 103, 108)]),
    "clarification": (97, 64, [("over_clarification", 0, 59), ("under_clarification", 59, 90), ("wrong_focus", 90, 97)]),
    "knowledge": (76, 48, [("missing", 0, 48), ("not_surfaced", 48, 67), ("incorrect", 67, 76), ("incorrect", 0, 4)]),
    "tool": (59, 43, [("missed_call", 0, 34), ("tool_missing", 34, 55), ("wrong_params", 55, 59)]),
}

EXPECTED = {
    "style": {"case_count": 108, "sev": {"high": 72, "medium": 36, "low": 0}, "issues": {"verbose": 78, "robotic": 25, "cold": 5}},
    "clarification": {
        "case_count": 97,
        "sev": {"high": 64, "medium": 33, "low": 0},
        "issues": {"over_clarification": 59, "under_clarification": 31, "wrong_focus": 7},
    },
    "knowledge": {
        "case_count": 76,
        "sev": {"high": 48, "medium": 28, "low": 0},
        "issues": {"missing": 48, "not_surfaced": 19, "incorrect": 13},
    },
    "tool": {
        "case_count": 59,
        "sev": {"high": 43, "medium": 16, "low": 0},
        "issues": {"missed_call": 34, "tool_missing": 21, "wrong_params": 4},
    },
}

HINTS = {
    "verbose": ["Keep replies under five sentences", "keep replies under  five sentences"],
    "robotic": ["Address the customer by the product they use"],
    "cold": ["Acknowledge the inconvenience first"],
    "over_clarification": ["Do not ask for information already in the history"],
    "under_clarification": ["Ask for the bucket region before diagnosing"],
    "wrong_focus": ["Ask about the error code, not the account"],
    "missing": ["Add the regional endpoint table to background knowledge"],
    "not_surfaced": ["Point the agent at the endpoint reference"],
    "incorrect": ["Fix the stated signed URL lifetime"],
    "missed_call": ["Call request_log_lookup before answering"],
    "tool_missing": ["Declare the bucket_info tool"],
    "wrong_params": ["Pass the request id, not the bucket name"],
}


def case_id(i: int) -> str:
    return f"T{i:03d}#1"


def build_records() -> list[FailureRecord]:
    severities: list[dict[str, str]] = [{} for _ in range(N_CASES)]
    issues: list[dict[str, list[str]]] = [{} for _ in range(N_CASES)]
    hints: list[dict[str, str]] = [{} for _ in range(N_CASES)]
    for dim, (members, highs, spans) in LAYOUT.items():
        for i in range(members):
            severities[i][dim] = "high" if i < highs else "medium"
        for issue, a, b in spans:
            for i in range(a, b):
                issues[i].setdefault(dim, []).append(issue)
                options = HINTS[issue]
                hints[i].setdefault(dim, options[i % len(options)])
    return [record_from_severities(case_id(i), severities[i], issues[i], hints[i]) for i in range(N_CASES)]
