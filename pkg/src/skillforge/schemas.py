"""Closed vocabularies and the JSON schemas that model outputs must satisfy."""

from __future__ import annotations

from typing import Any

DIMENSIONS = ("knowledge", "tool", "clarification", "style")
SEVERITIES = ("none", "low", "medium", "high")
SEVERITY_RANK = {s: i for i, s in enumerate(SEVERITIES)}
VERDICTS = ("consistent", "partial", "inconsistent")
RISKS = ("low", "medium", "high")
DEFECT_KINDS = ("missing", "insufficient", "incorrect")
PHASE_TAGS = ("clarify", "gather", "diagnose", "resolve", "escalate")

VOCAB: dict[str, tuple[str, ...]] = {
    "knowledge": ("missing", "incorrect", "contradictory", "outdated", "misapplied", "not_surfaced"),
    "tool": ("missed_call", "wrong_tool", "wrong_params", "repeated_call", "result_misread", "underutilized", "tool_missing"),
    "clarification": ("over_clarification", "under_clarification", "wrong_focus"),
    "style": ("robotic", "verbose", "cold", "inappropriate_tone"),
}

# Spellings seen in analyst output that map onto the canonical vocabulary.
ALIASES: dict[str, dict[str, str]] = {
    "knowledge": {"factual_error": "incorrect", "hallucinated": "incorrect"},
    "tool": {"missing_call": "missed_call", "missed_invocation": "missed_call", "wrong_parameters": "wrong_params"},
    "clarification": {"over_asking": "over_clarification", "under_asking": "under_clarification", "irrelevant_questions": "wrong_focus"},
    "style": {"too_verbose": "verbose", "mechanical": "robotic"},
}


def canonical_issue(dimension: str, issue: str) -> str:
    return ALIASES.get(dimension, {}).get(issue, issue)


def parse_issue_key(key: str) -> tuple[str, str]:
    """Split ``"category:issue"`` and canonicalize the issue name."""
    cat, _, issue = key.partition(":")
    return cat, canonical_issue(cat, issue)


def _str(min_len: int = 0) -> dict[str, Any]:
    return {"type": "string", "minLength": min_len}


def finding_schema(dimension: str) -> dict[str, Any]:
    allowed = list(VOCAB[dimension]) + sorted(ALIASES.get(dimension, {}))
    return {
        "type": "object",
        "required": ["severity", "issue_types"],
        "properties": {
            "severity": {"enum": list(SEVERITIES)},
            "issue_types": {"type": "array", "items": {"enum": allowed}},
            "evidence": {"type": "array", "items": {"type": "string"}},
            "hint": {"type": "string"},
        },
    }


LOCATION = {
    "type": "object",
    "required": ["file"],
    "properties": {
        "file": _str(1),
        "section": {"type": "string"},
        "lines": {"type": "array", "items": {"type": "integer", "minimum": 1}, "minItems": 2, "maxItems": 2},
        "new_section": {"type": "boolean"},
    },
}

ATTRIBUTION = {
    "type": "object",
    "required": ["category_issue", "defect_kind", "location", "evidence_case_ids"],
    "properties": {
        "category_issue": _str(3),
        "defect_kind": {"enum": list(DEFECT_KINDS)},
        "location": LOCATION,
        "evidence_case_ids": {"type": "array", "items": {"type": "string"}},
    },
}

PLAN_ITEM = {
    "type": "object",
    "required": ["priority", "addresses", "locations", "change_description", "risk"],
    "properties": {
        "priority": {"type": "integer", "minimum": 1},
        "addresses": {
            "type": "array",
            "items": {
                "type": "object",
                "required": ["issue"],
                "properties": {"issue": _str(3), "count": {"type": "integer", "minimum": 0}},
            },
        },
        "locations": {"type": "array", "items": LOCATION},
        "change_description": _str(1),
        "modifications": {"type": "array", "items": {"type": "string"}},
        "needs_knowledge_search": {"type": "boolean"},
        "search_queries": {"type": "array", "items": {"type": "string"}},
        "needs_examples": {"type": "boolean"},
        "expected_impact": {"type": "string"},
        "risk": {"enum": list(RISKS)},
        "defect_kind": {"enum": list(DEFECT_KINDS)},
    },
}

SCHEMAS: dict[str, dict[str, Any]] = {
    "judge_verdict": {
        "type": "object",
        "required": ["verdict", "ref_core_action", "actual_action", "reason"],
        "properties": {
            "verdict": {"enum": list(VERDICTS)},
            "ref_core_action": _str(1),
            "actual_action": _str(1),
            "reason": _str(1),
        },
    },
    **{f"finding:{d}": finding_schema(d) for d in DIMENSIONS},
    "case_summary": {
        "type": "object",
        "required": ["divergence_summary", "diagnostic_hints"],
        "properties": {
            "divergence_summary": {"type": "string"},
            "diagnostic_hints": {"type": "array", "items": {"type": "string"}},
        },
    },
    "workflow_record": {
        "type": "object",
        "required": ["core_issue", "case_type", "resolution_path"],
        "properties": {
            "core_issue": _str(1),
            "case_type": _str(1),
            "resolution_path": {
                "type": "array",
                "minItems": 1,
                "items": {
                    "type": "object",
                    "required": ["tag", "step"],
                    "properties": {
                        "tag": {"enum": list(PHASE_TAGS)},
                        "step": _str(1),
                        "condition": {"type": "string"},
                        "tool": {"type": "string"},
                    },
                },
            },
            "accumulated_experience": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["text", "polarity"],
                    "properties": {"text": _str(1), "polarity": {"enum": ["positive", "negative"]}},
                },
            },
            "exemplar_responses": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["response", "usage_context"],
                    "properties": {"response": _str(1), "usage_context": _str(1)},
                },
            },
            "failure_causes": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["symptom", "cause", "resolution"],
                    "properties": {"symptom": _str(1), "cause": _str(1), "resolution": _str(1)},
                },
            },
        },
    },
    "relevance": {
        "type": "object",
        "required": ["relevant"],
        "properties": {"relevant": {"type": "boolean"}, "reason": {"type": "string"}},
    },
    "condensed_article": {
        "type": "object",
        "required": ["title", "key_points"],
        "properties": {"title": _str(1), "key_points": {"type": "array", "items": {"type": "string"}}},
    },
    "agent_step": {
        "type": "object",
        "required": ["action"],
        "properties": {
            "action": {"enum": ["thought", "tool_call", "read_file", "final"]},
            "thought": {"type": "string"},
            "tool": {"type": "string"},
            "args": {"type": "object"},
            "path": {"type": "string"},
            "response": {"type": "string"},
        },
        "allOf": [
            {"if": {"properties": {"action": {"const": "tool_call"}}}, "then": {"required": ["tool"]}},
            {"if": {"properties": {"action": {"const": "read_file"}}}, "then": {"required": ["path"]}},
            {"if": {"properties": {"action": {"const": "final"}}}, "then": {"required": ["response"]}},
        ],
    },
    "diagnostician_step": {
        "type": "object",
        "required": ["action"],
        "properties": {
            "action": {"enum": ["read_file", "grep", "list", "head", "submit_attributions", "submit_plan"]},
            "thought": {"type": "string"},
            "path": {"type": "string"},
            "pattern": {"type": "string"},
            "n": {"type": "integer", "minimum": 0},
            "attributions": {"type": "array", "items": ATTRIBUTION},
            "plan": {"type": "array", "items": PLAN_ITEM},
            "summary": {"type": "string"},
        },
        "allOf": [
            {"if": {"properties": {"action": {"const": "submit_attributions"}}}, "then": {"required": ["attributions"]}},
            {"if": {"properties": {"action": {"const": "submit_plan"}}}, "then": {"required": ["plan"]}},
        ],
    },
    "optimizer_edits": {
        "type": "object",
        "required": ["edits"],
        "properties": {
            "edits": {
                "type": "array",
                "items": {
                    "type": "object",
                    "required": ["content_kind", "content", "case_ids"],
                    "properties": {
                        "content_kind": {
                            "enum": ["knowledge", "tool_rule", "clarification_rule", "style_rule", "example", "faq_entry"]
                        },
                        "content": _str(1),
                        "tool": {"type": "string"},
                        "section": {"type": "string"},
                        "replace": {"type": "string"},
                        "source_url": {"type": "string"},
                        "title": {"type": "string"},
                        "case_ids": {"type": "array", "items": {"type": "string"}},
                        "issue": {"type": "string"},
                    },
                },
            }
        },
    },
}
