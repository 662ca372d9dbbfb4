"""Synthetic object-storage support world for offline runs.

The generator emits tickets whose expert replies are built from a hidden rule
table. ``SimulatedProvider`` answers every pipeline prompt from that table:
the simulated agent uses a rule only when the loaded skill text contains it,
the judge compares reply sentences, and the analyst reports the rules whose
answers are missing. A run therefore improves exactly when the optimizer adds
missing rules to the skill, which makes end-to-end behaviour checkable.
"""

from __future__ import annotations

import json
import random
import re
from dataclasses import asdict, dataclass, field
from datetime import datetime, timedelta, timezone
from pathlib import Path
from typing import Any, Mapping, Sequence

from .corpus import AGENT, CUSTOMER, Ticket, Turn, parse_ts
from .layout import slugify
from .llm import ChatRequest, ChatResponse, LLMError, extract_json
from .skill import ToolParam, ToolSchema, dump_tools, parse_skill_md

SCENARIO = "oss"
SENT_SPLIT = re.compile(r"(?<=[.!?])\s+")

GREETINGS = ("Hello, thank you for contacting us.", "Hi, thanks for contacting us!")
CLOSINGS = ("Thank you, have a nice day!", "You're welcome, is there anything else I can help you with?")

FALLBACK = {
    "knowledge": "This can be caused by several configuration factors on your side.",
    "tool": "Please review the bucket settings in the console and try again.",
    "clarification": "Could you send the RequestID, the bucket name and the full error message?",
    "style": "Below is a complete overview of every possible cause and the related settings.",
}
HINT_PREFIX = "Add to the skill: "


@dataclass(frozen=True)
class Rule:
    id: str
    case: str
    kind: str
    issue: str
    text: str
    answer: str
    tool: str = ""
    critical: bool = True


@dataclass(frozen=True)
class CaseDef:
    slug: str
    label: str
    weight: float
    item: str  # what the customer typically already provides
    tools: tuple[str, ...]
    steps: tuple[tuple[str, str, str, str], ...]  # (tag, step, condition, tool)
    cause: tuple[str, str, str]
    docs: tuple[str, ...]


TOOLS = {
    "request_log_lookup": ToolSchema(
        "request_log_lookup", "Look up server-side request logs by RequestID.",
        (ToolParam("request_id", "string", True, "RequestID from the error response"),), "status, error code and policy decision",
    ),
    "bucket_info": ToolSchema(
        "bucket_info", "Read bucket configuration: ACL, policy, region, mirror and CDN settings.",
        (ToolParam("bucket", "string", True, "bucket name"),), "bucket configuration document",
    ),
    "billing_query": ToolSchema(
        "billing_query", "Read resource packages and billing items for the account.",
        (ToolParam("account", "string", True, "account placeholder"), ToolParam("period", "string", False, "billing month")),
        "packages with activation dates and usage",
    ),
    "cdn_domain_status": ToolSchema(
        "cdn_domain_status", "Check a CDN accelerated domain bound to a bucket.",
        (ToolParam("domain", "string", True, "accelerated domain placeholder"),), "domain status and origin settings",
    ),
    "legacy_console_export": ToolSchema("legacy_console_export", "Deprecated export utility.", (), "csv"),
}

CASES: tuple[CaseDef, ...] = (
    CaseDef(
        "access_denied", "Access Denied 403", 0.24, "RequestID", ("request_log_lookup", "bucket_info"),
        (("clarify", "Confirm which operation returns 403", "", ""),
         ("gather", "Collect the RequestID from the error response", "", ""),
         ("diagnose", "Read the request log for the denying policy", "", "request_log_lookup"),
         ("diagnose", "Compare the bucket policy with the caller identity", "the caller uses a RAM user", "bucket_info"),
         ("resolve", "Explain which policy statement to change", "", "")),
        ("403 on GetObject", "bucket policy denies the RAM user", "grant oss:GetObject on the object prefix"),
        ("https://docs.example.invalid/oss/permissions", "https://docs.example.invalid/oss/errors"),
    ),
    CaseDef(
        "upload_failure", "Upload Failure", 0.2, "error code", ("request_log_lookup",),
        (("clarify", "Ask which client or SDK performs the upload", "", ""),
         ("gather", "Collect the error code and object size", "", ""),
         ("diagnose", "Read the request log for the failed PUT", "", "request_log_lookup"),
         ("resolve", "Recommend multipart upload or a retry policy", "the object is larger than 5 GB", ""),
         ("resolve", "Recommend correcting the request signature", "", "")),
        ("uploads time out", "single PUT of a very large file", "use multipart upload"),
        ("https://docs.example.invalid/oss/upload", "https://docs.example.invalid/oss/errors"),
    ),
    CaseDef(
        "signed_url", "Signed URL Access", 0.16, "signed URL", ("bucket_info",),
        (("clarify", "Confirm the customer holds a complete signed URL", "", ""),
         ("diagnose", "Check expiry time and bucket ACL", "", "bucket_info"),
         ("resolve", "Confirm whether the link works and what it costs", "", ""),
         ("escalate", "Escalate when the signature is valid but access still fails", "the signature verifies but access fails", "")),
        ("signed link returns 403", "the link has expired", "generate a new signed URL"),
        ("https://docs.example.invalid/oss/signed-url",),
    ),
    CaseDef(
        "mirror_origin", "Mirror Back-to-Origin", 0.14, "mirror rule", ("bucket_info",),
        (("clarify", "Confirm the mirror rule and the failing object path", "", ""),
         ("diagnose", "Read the mirror configuration", "", "bucket_info"),
         ("diagnose", "Check the status code returned by the origin", "the origin returns 5xx", ""),
         ("resolve", "Explain the origin requirement or the rule fix", "", "")),
        ("502 on mirrored object", "origin does not answer with 200, 206 or 404", "fix the origin response"),
        ("https://docs.example.invalid/oss/mirror", "https://docs.example.invalid/oss/errors"),
    ),
    CaseDef(
        "billing_package", "Resource Package Billing", 0.12, "bill line", ("billing_query",),
        (("clarify", "Ask which bill line looks wrong", "", ""),
         ("diagnose", "Read resource packages and their activation dates", "", "billing_query"),
         ("resolve", "Explain which usage the package can offset", "", "")),
        ("package not deducted", "usage happened before activation", "explain the activation rule"),
        ("https://docs.example.invalid/oss/billing",),
    ),
    CaseDef(
        "cdn_acceleration", "CDN Acceleration", 0.11, "accelerated domain", ("cdn_domain_status",),
        (("clarify", "Confirm the accelerated domain and the failing URL", "", ""),
         ("diagnose", "Check the CDN domain status and origin host", "", "cdn_domain_status"),
         ("resolve", "Explain the origin host or private bucket setting", "the bucket is private", "")),
        ("CDN returns 403", "private bucket without origin authentication", "enable private bucket back-to-origin"),
        ("https://docs.example.invalid/oss/cdn", "https://docs.example.invalid/oss/permissions"),
    ),
    CaseDef(
        "lifecycle_rules", "Lifecycle Rules", 0.03, "rule prefix", (),
        (("clarify", "Ask which objects the rule should expire", "", ""),
         ("resolve", "Explain that rules run asynchronously within a day", "", "")),
        ("objects not deleted", "rule evaluation is asynchronous", "wait up to 24 hours"),
        ("https://docs.example.invalid/oss/lifecycle",),
    ),
)

# (kind, issue, rule text, expert answer); tool rules name their tool via {tool}.
RULES: dict[str, tuple[tuple[str, str, str, str], ...]] = {
    "access_denied": (
        ("knowledge", "missing", "Explicit Deny in a bucket policy overrides every Allow, including RAM grants.", "An explicit Deny in your bucket policy overrides the Allow on your RAM user."),
        ("tool", "missed_call", "When a 403 comes with a RequestID, call `request_log_lookup` before answering.", "I looked up your RequestID and the log shows the request was denied by the bucket policy."),
        ("clarification", "over_clarification", "If the customer already sent the RequestID, do not ask for it again.", "Thanks for the RequestID, that is all I need to check the denial."),
        ("style", "verbose", "For 403 questions, name the denying statement first and keep the reply short.", "In short, the statement named DenyPublic blocks this request."),
        ("knowledge", "not_surfaced", "A 403 with AccessDenied from a CDN path means the bucket is private, not that the key is wrong.", "The 403 comes from the bucket being private, your AccessKey itself is fine."),
        ("knowledge", "incorrect", "Public-read ACL does not allow anonymous writes; uploads still need a signature.", "Public-read lets anyone download, but uploads still need a signed request."),
        ("tool", "result_misread", "After calling `bucket_info`, quote the policy statement that matches the caller.", "The bucket configuration shows a policy statement that matches your RAM user."),
        ("clarification", "under_clarification", "Before diagnosing a 403, ask whether the caller is a RAM user or the root account.", "Could you tell me whether the request is made with a RAM user or the root account?"),
    ),
    "upload_failure": (
        ("knowledge", "missing", "A single PUT is limited to 5 GB; larger objects need multipart upload.", "A single upload request is limited to 5 GB, so this file needs multipart upload."),
        ("tool", "missed_call", "When an upload fails with an error code, call `request_log_lookup` to read the server-side reason.", "The server log for your upload shows the request timed out while receiving data."),
        ("clarification", "over_clarification", "If the customer already gave the error code, do not ask for the SDK logs first.", "The error code you shared is enough for me to see what went wrong."),
        ("style", "verbose", "For upload failures, give the fix first and the explanation after it.", "The fix is to switch to multipart upload, and here is why."),
        ("knowledge", "missing", "SignatureDoesNotMatch on upload usually means the Content-Type header differs from the signed one.", "SignatureDoesNotMatch here means the Content-Type you send differs from the one you signed."),
        ("knowledge", "outdated", "Multipart parts can be 100 KB to 5 GB and up to 10000 parts per upload.", "Each part can be between 100 KB and 5 GB and you can use up to 10000 parts."),
        ("clarification", "under_clarification", "Before diagnosing an upload, ask for the object size when it is not stated.", "How large is the file you are uploading?"),
        ("style", "robotic", "When an upload keeps failing, acknowledge the lost time before giving steps.", "I understand the repeated failures have cost you time, so let's fix this quickly."),
    ),
    "signed_url": (
        ("knowledge", "missing", "A valid, unexpired signed URL can read objects in a private bucket.", "Yes, a valid signed URL can access the file in your private bucket."),
        ("tool", "missed_call", "When the customer shares a signed URL, call `bucket_info` to confirm the bucket ACL.", "I checked the bucket settings and it is private, which is expected for signed links."),
        ("clarification", "over_clarification", "If a complete signed URL with its expiry is provided, do not ask for error codes.", "The signed URL you sent includes its expiry, so I can answer directly."),
        ("knowledge", "missing", "Downloads through a signed URL are billed as outbound traffic to the bucket owner.", "Note that downloads through the link are billed as outbound traffic."),
        ("style", "verbose", "For signed URL questions, answer yes or no before any detail.", "Yes, the link works as long as it has not expired."),
        ("knowledge", "incorrect", "Signed URLs made with STS credentials expire no later than the STS token.", "Because the link was signed with an STS token, it stops working when that token expires."),
        ("clarification", "wrong_focus", "For signed URL failures, check the expiry time before asking about network issues.", "The expiry time in your link has already passed, which explains the error."),
    ),
    "mirror_origin": (
        ("knowledge", "incorrect", "Mirror rules may include the https:// prefix and a /* wildcard.", "Your mirror rule format with https:// and /* is valid."),
        ("knowledge", "missing", "Mirror back-to-origin only succeeds when the origin answers 200, 206 or 404.", "The 502 happens because the origin did not answer with 200, 206 or 404."),
        ("tool", "missed_call", "When a mirror rule is mentioned, call `bucket_info` to read the actual mirror configuration.", "I read your mirror configuration and the origin address is set correctly."),
        ("clarification", "wrong_focus", "Do not question a mirror rule before checking how the origin responds.", "Before changing the rule, let's look at how your origin responds."),
        ("style", "inappropriate_tone", "Never tell the customer their valid mirror configuration is wrong.", "Your configuration itself is fine, so no change is needed there."),
        ("knowledge", "misapplied", "Mirror rules apply only when the object is missing from the bucket.", "Mirroring only triggers when the object does not exist in the bucket yet."),
    ),
    "billing_package": (
        ("knowledge", "missing", "Resource packages only offset usage incurred after their activation date.", "The package only offsets usage after its activation date, not earlier usage."),
        ("tool", "missed_call", "For billing questions, call `billing_query` to read packages and activation dates.", "I checked your account and the package was activated after that usage."),
        ("clarification", "over_clarification", "If the bill line is identified, do not ask the customer for screenshots.", "The bill line you mentioned is enough for me to check."),
        ("style", "verbose", "For billing questions, state the deduction rule in one sentence before details.", "Simply put, earlier usage is billed pay-as-you-go."),
        ("knowledge", "missing", "Storage packages do not cover outbound traffic; that needs a traffic package.", "Your storage package does not cover outbound traffic, which needs a traffic package."),
        ("style", "cold", "When a customer feels overcharged, acknowledge the concern before explaining.", "I understand an unexpected charge is frustrating."),
    ),
    "cdn_acceleration": (
        ("knowledge", "missing", "A private bucket behind CDN needs private back-to-origin authentication enabled.", "Because the bucket is private, enable private bucket back-to-origin on the CDN domain."),
        ("tool", "missed_call", "When an accelerated domain is mentioned, call `cdn_domain_status` before answering.", "I checked your accelerated domain and it is online with the bucket as origin."),
        ("clarification", "under_clarification", "Ask for the failing URL when only the domain is given.", "Could you share one full URL that fails?"),
        ("knowledge", "not_surfaced", "CDN caches 404 responses, so refresh the cache after uploading a missing object.", "The CDN cached the earlier 404, so please refresh the cache for that path."),
        ("style", "verbose", "For CDN questions, give the one setting to change before background.", "The setting to change is the origin host header."),
        ("knowledge", "missing", "The CDN origin host header must be the bucket endpoint, not the custom domain.", "Set the origin host header to the bucket endpoint rather than your custom domain."),
    ),
    "lifecycle_rules": (
        ("knowledge", "missing", "Lifecycle rules run asynchronously and can take up to 24 hours to act.", "Lifecycle rules run asynchronously and can take up to 24 hours."),
        ("knowledge", "missing", "Lifecycle rules match object prefixes and ignore tags unless a tag filter is set.", "The rule matches by prefix, so tags are ignored unless you add a tag filter."),
    ),
}

ARTICLES = (
    {"title": "OSS permission model", "url": "https://docs.example.invalid/oss/permissions", "tags": ["access_denied", "cdn_acceleration"],
     "body": "Bucket policies, ACLs and RAM policies are evaluated together. Policies attach to buckets or users.", "authoritative": True},
    {"title": "OSS error codes", "url": "https://docs.example.invalid/oss/errors", "tags": ["access_denied", "upload_failure", "mirror_origin"],
     "body": "Every error response carries a RequestID. Error codes name the failing check.", "authoritative": True},
    {"title": "Uploading objects", "url": "https://docs.example.invalid/oss/upload", "tags": ["upload_failure"],
     "body": "Objects can be uploaded by simple upload or multipart upload. Resumable upload restarts failed parts.", "authoritative": True},
    {"title": "Signed URLs", "url": "https://docs.example.invalid/oss/signed-url", "tags": ["signed_url"],
     "body": "A signed URL carries an expiry and a signature. Anyone holding it can perform the signed operation.", "authoritative": True},
    {"title": "Mirror back-to-origin", "url": "https://docs.example.invalid/oss/mirror", "tags": ["mirror_origin"],
     "body": "Mirror rules fetch missing objects from an origin. The fetched object is stored in the bucket.", "authoritative": True},
    {"title": "Resource packages", "url": "https://docs.example.invalid/oss/billing", "tags": ["billing_package"],
     "body": "Resource packages prepay storage or traffic. Usage beyond a package is billed pay-as-you-go.", "authoritative": True},
    {"title": "CDN acceleration for OSS", "url": "https://docs.example.invalid/oss/cdn", "tags": ["cdn_acceleration"],
     "body": "A CDN domain can use a bucket as origin. Cache rules control how long objects stay at edge nodes.", "authoritative": True},
    {"title": "Lifecycle management", "url": "https://docs.example.invalid/oss/lifecycle", "tags": ["lifecycle_rules"],
     "body": "Lifecycle rules expire or transition objects. Rules are evaluated once a day.", "authoritative": True},
    {"title": "Data center power usage report", "url": "https://blog.example.invalid/power", "tags": ["unrelated"],
     "body": "Annual energy figures for facilities. Not related to storage troubleshooting.", "authoritative": True},
)


def build_rules() -> dict[str, Rule]:
    out: dict[str, Rule] = {}
    for case in CASES:
        for i, (kind, issue, text, answer) in enumerate(RULES[case.slug]):
            tool = ""
            m = re.search(r"`([a-z_]+)`", text)
            if kind == "tool" and m:
                tool = m.group(1)
            rid = f"{case.slug}.{i}"
            out[rid] = Rule(rid, case.slug, kind, issue, text, answer, tool, critical=i % 3 != 2)
    answers = [r.answer for r in out.values()]
    assert len(set(answers)) == len(answers), "rule answers must be unique"
    return out


@dataclass
class World:
    rules: dict[str, Rule] = field(default_factory=build_rules)
    cases: dict[str, CaseDef] = field(default_factory=lambda: {c.slug: c for c in CASES})
    truth: dict[str, dict[str, Any]] = field(default_factory=dict)  # ticket id -> hidden labels

    def __post_init__(self) -> None:
        self._by_answer = {r.answer: r for r in self.rules.values()}
        self._by_text = {r.text: r for r in self.rules.values()}

    def task_rules(self, task_id: str) -> list[Rule]:
        tid, _, idx = task_id.rpartition("#")
        ids = self.truth.get(tid, {}).get("turn_rules", {}).get(idx, [])
        return [self.rules[i] for i in ids]

    def case_of(self, ticket_id: str) -> CaseDef | None:
        slug = self.truth.get(ticket_id, {}).get("case")
        return self.cases.get(slug) if slug else None

    def rule_for_hint(self, hint: str) -> Rule | None:
        return self._by_text.get(hint[len(HINT_PREFIX):]) if hint.startswith(HINT_PREFIX) else None

    def ingest(self, tickets: Sequence[Ticket]) -> None:
        for t in tickets:
            sim = t.extra.get("sim")
            if sim:
                self.truth[t.id] = sim


def registry() -> dict[str, ToolSchema]:
    return {n: t for n, t in TOOLS.items() if n != "legacy_console_export"}


def _zipf_pick(rng: random.Random, n: int, k: int) -> list[int]:
    weights = [1 / (i + 1) ** 1.2 for i in range(n)]
    picked: list[int] = []
    while len(picked) < k:
        i = rng.choices(range(n), weights)[0]
        if i not in picked:
            picked.append(i)
    return picked


def generate_tickets(n: int = 200, seed: int = 7, start: str = "2024-01-01T00:00:00+00:00") -> list[Ticket]:
    """Deterministic corpus of ``n`` tickets averaging about two tasks each."""
    rng = random.Random(seed)
    rules = build_rules()
    t0 = parse_ts(start)
    weights = [c.weight for c in CASES]
    tickets = []
    for k in range(n):
        case = rng.choices(CASES, weights)[0]
        case_rules = [r for r in rules.values() if r.case == case.slug]
        created = t0 + timedelta(hours=rng.randint(0, 24 * 360), minutes=rng.randint(0, 59))
        ts = created
        turns: list[Turn] = []
        turn_rules: dict[str, list[str]] = {}
        ops: list[tuple[str, str]] = []

        def add(role: str, text: str) -> None:
            nonlocal ts
            ts = ts + timedelta(minutes=rng.randint(1, 30))
            turns.append(Turn(role, text, ts.isoformat()))

        add(CUSTOMER, f"Hi, I have a {case.label.lower()} problem with bucket <BUCKET_1>. Here is the {case.item}: <ID_{k}>.")
        if rng.random() < 0.4:
            add(AGENT, rng.choice(GREETINGS))
        n_tasks = rng.choices((1, 2, 3), (0.3, 0.45, 0.25))[0]
        for j in range(n_tasks):
            if j:
                add(CUSTOMER, rng.choice(("Thanks, one more question about this.", "That helps, but it still fails.", "Could you explain a bit more?")))
            kinds_seen: set[str] = set()
            chosen: list[Rule] = []
            for i in _zipf_pick(rng, len(case_rules), min(len(case_rules), rng.choice((1, 2, 2)))):
                r = case_rules[i]
                if r.kind not in kinds_seen:
                    kinds_seen.add(r.kind)
                    chosen.append(r)
            add(AGENT, " ".join(r.answer for r in chosen))
            turn_rules[str(len(turns) - 1)] = [r.id for r in chosen]
            for r in chosen:
                if r.tool:
                    ops.append((r.tool, turns[-1].ts))
        add(CUSTOMER, "Thanks, that solved it.")
        if rng.random() < 0.5:
            add(AGENT, rng.choice(CLOSINGS))
        for tool in case.tools:
            if (tool, turns[0].ts) not in ops:
                ops.append((tool, turns[0].ts))
        if rng.random() < 0.1:
            ops.append(("legacy_console_export", turns[0].ts))
        ops.sort(key=lambda o: (o[1], o[0]))
        cited = [case.docs[0]] if rng.random() < 0.6 else list(case.docs)
        tickets.append(
            Ticket(
                f"T{k:04d}",
                SCENARIO,
                created.isoformat(),
                f"{case.label} on <BUCKET_1>: {case.cause[0]} caused by {case.cause[1]}; resolved: {case.cause[2]}.",
                tuple(turns),
                tuple(ops),
                tuple(cited),
                {"sim": {"case": case.slug, "turn_rules": turn_rules}},
            )
        )
    return tickets


def write_bundle(directory: str | Path, n: int = 200, seed: int = 7) -> dict[str, Path]:
    """Write corpus.jsonl, tools_registry.json and articles.json under ``directory``."""
    from .corpus import dump_corpus

    d = Path(directory)
    d.mkdir(parents=True, exist_ok=True)
    paths = {"corpus": d / "corpus.jsonl", "registry": d / "tools_registry.json", "articles": d / "articles.json"}
    dump_corpus(generate_tickets(n, seed), paths["corpus"])
    paths["registry"].write_text(dump_tools(list(registry().values())), encoding="utf-8")
    paths["articles"].write_text(json.dumps({"articles": list(ARTICLES)}, indent=1, ensure_ascii=False) + "\n", encoding="utf-8")
    return paths


# --------------------------------------------------------------------------
# simulated provider


def sentences(text: str) -> list[str]:
    return [s.strip() for s in SENT_SPLIT.split(text.strip()) if s.strip()]


def _payload(text: str) -> Any:
    return extract_json(text)


class SimulatedProvider:
    """Deterministic stand-in for the model, driven by the hidden rule table."""

    name = "simulated"

    def __init__(self, world: World) -> None:
        self.world = world

    @classmethod
    def from_tickets(cls, tickets: Sequence[Ticket]) -> SimulatedProvider:
        w = World()
        w.ingest(tickets)
        return cls(w)

    def chat(self, request: ChatRequest) -> ChatResponse:
        kind = request.tag.split(":", 1)[0]
        handler = {
            "exec": self._agent,
            "judge": self._judge,
            "analyze": self._analyze,
            "summarize": self._summarize,
            "create": self._create,
            "diagnose": self._diagnose,
            "optimize": self._optimize,
        }.get(kind)
        if handler is None:
            raise LLMError("unmatched_script", f"simulator has no behaviour for tag {request.tag!r}")
        out = handler(request)
        text = json.dumps(out, ensure_ascii=False, sort_keys=True)
        # same accounting as the scripted provider so recorded runs replay identically
        return ChatResponse(text, None, {"completion_tokens": len(text.split())}, self.name)

    # -- agent ---------------------------------------------------------------

    def _agent(self, req: ChatRequest) -> dict[str, Any]:
        task = _payload(req.messages[1].content)
        rules = self.world.task_rules(task["task_id"])
        system = req.messages[0].content
        loaded: dict[str, str] = {}
        called: set[str] = set()
        read: set[str] = set()
        for m in req.messages[2:]:
            if m.role == "assistant":
                step = json.loads(m.content)
                if step["action"] == "read_file":
                    read.add(step["path"])
                elif step["action"] == "tool_call":
                    called.add(step["tool"])
            elif m.content.startswith("Contents of "):
                head, _, body = m.content.partition("\n")
                loaded[head] = body
        case = self.world.case_of(task["task_id"].rpartition("#")[0])
        slug = slugify(case.label) if case else "\0"
        listed = re.findall(r"^references/(\S+)$", system.split("=== REFERENCE FILES ===", 1)[-1], flags=re.MULTILINE)
        for ref in listed:
            wanted = ref.startswith(("details_", "knowledge_")) and (slug in ref or "background" in ref or ref.startswith("knowledge_"))
            if wanted and f"references/{ref}" not in read:
                return {"action": "read_file", "path": f"references/{ref}"}
        context = system + "\n" + "\n".join(loaded.values())
        covered = [r for r in rules if r.text in context]
        for r in covered:
            if r.tool and r.tool not in called:
                return {"action": "tool_call", "tool": r.tool, "args": {"bucket": "<BUCKET_1>"}}
        parts: list[str] = []
        for r in rules:
            s = r.answer if r in covered else FALLBACK[r.kind]
            if s not in parts:
                parts.append(s)
        return {"action": "final", "response": " ".join(parts) or "Could you tell me more about the problem?"}

    # -- judge ---------------------------------------------------------------

    def _judge(self, req: ChatRequest) -> dict[str, Any]:
        p = _payload(req.last_user)
        ref, act = sentences(p["reference_response"]), sentences(p["actual_response"])
        shared = [s for s in ref if s in act]
        if ref and len(shared) == len(ref):
            verdict, reason = "consistent", "The reply performs the expert's core action."
        elif shared:
            verdict, reason = "partial", "The reply covers part of the expert's action but misses key details."
        else:
            verdict, reason = "inconsistent", "The reply does not perform the expert's core action."
        return {"verdict": verdict, "reason": reason, "ref_core_action": ref[0] if ref else "(empty)", "actual_action": act[0] if act else "(empty)"}

    # -- failure analysis ----------------------------------------------------

    def _analyze(self, req: ChatRequest) -> dict[str, Any]:
        dim = req.tag.split(":")[2]
        p = _payload(req.last_user)
        missing = [r for r in self.world.task_rules(p["case_id"]) if r.kind == dim and r.answer not in p["actual_response"]]
        if not missing:
            return {"severity": "none", "issue_types": [], "evidence": [], "hint": ""}
        r = missing[0]
        return {
            "severity": "high" if r.critical else "medium",
            "issue_types": [r.issue],
            "evidence": [p["actual_response"][:120]],
            "hint": HINT_PREFIX + r.text,
        }

    def _summarize(self, req: ChatRequest) -> dict[str, Any]:
        p = _payload(req.last_user)
        hints = [f["hint"] for f in p["findings"] if f.get("hint")]
        return {"divergence_summary": f"Primary gap: {p['primary_category']}.", "diagnostic_hints": hints}

    # -- creator ---------------------------------------------------------------

    def _create(self, req: ChatRequest) -> dict[str, Any]:
        stage = req.tag.split(":")[1]
        p = _payload(req.last_user)
        if stage == "mine":
            return self._mine(p)
        if stage == "relevance":
            art = next((a for a in ARTICLES if a["title"] == p["title"]), None)
            slug = next((c.slug for c in CASES if c.label == p["case_type"]), "")
            ok = bool(art) and slug in art["tags"]
            return {"relevant": ok, "reason": "matches the case type" if ok else "unrelated to the case type"}
        if stage == "condense":
            return {"title": p["title"], "key_points": sentences(p["body"])[:2]}
        raise LLMError("unmatched_script", req.tag)

    def _mine(self, p: Mapping[str, Any]) -> dict[str, Any]:
        tid = p["ticket_id"]
        case = self.world.case_of(tid)
        if case is None:
            raise LLMError("unmatched_script", f"no hidden labels for ticket {tid}")
        used: list[Rule] = []
        for ids in self.world.truth[tid]["turn_rules"].values():
            for i in ids:
                if self.world.rules[i] not in used:
                    used.append(self.world.rules[i])
        agent_turns = [t["text"] for t in p["dialogue"] if t["role"] == AGENT and len(t["text"]) > 60]
        return {
            "core_issue": f"Customer cannot complete an OSS operation: {case.cause[0]} on <BUCKET_1>.",
            "case_type": case.label,
            "resolution_path": [{"tag": t, "step": s, "condition": c, "tool": tool} for t, s, c, tool in case.steps],
            "accumulated_experience": [{"text": r.text, "polarity": "negative" if r.text.startswith(("Do not", "Never", "If the", "If a")) else "positive"} for r in used],
            "exemplar_responses": [{"response": agent_turns[0], "usage_context": f"answering a {case.label.lower()} question"}] if agent_turns else [],
            "failure_causes": [{"symptom": case.cause[0], "cause": case.cause[1], "resolution": case.cause[2]}],
        }

    # -- diagnostician -----------------------------------------------------

    def _diagnose(self, req: ChatRequest) -> dict[str, Any]:
        first = _payload(req.messages[1].content)
        cats = list(first["overview"]["category_distribution"])
        read: dict[str, str] = {}
        submitted_attr = False
        for m in req.messages[2:]:
            if m.role == "assistant":
                step = json.loads(m.content)
                submitted_attr |= step["action"] == "submit_attributions"
            elif m.content.startswith("Contents of "):
                head, _, body = m.content.partition("\n")
                read[head[len("Contents of "):].rstrip(":")] = body
        if "/skill/SKILL.md" not in read:
            return {"action": "read_file", "path": "/skill/SKILL.md", "thought": "Understand the skill structure first."}
        for c in cats:
            if f"/analysis/{c}.json" not in read:
                return {"action": "read_file", "path": f"/analysis/{c}.json"}
        doc = parse_skill_md(read["/skill/SKILL.md"])
        files = {c: json.loads(read[f"/analysis/{c}.json"]) for c in cats}
        handling = [s.title for s in doc.sections if s.kind == "CaseTypeHandling"]
        background = next((s.title for s in doc.sections if s.kind == "BackgroundKnowledge"), None)

        def location(cat: str) -> dict[str, Any]:
            if cat == "knowledge" and background:
                return {"file": "SKILL.md", "section": background}
            if cat == "style":
                if doc.find("Response Guidelines"):
                    return {"file": "SKILL.md", "section": "Response Guidelines"}
                return {"file": "SKILL.md", "section": "Response Guidelines", "new_section": True}
            if handling:
                return {"file": "SKILL.md", "section": handling[0]}
            return {"file": "SKILL.md", "section": "Background Knowledge", "new_section": background is None}

        if not submitted_attr:
            attrs = []
            for c in cats:
                f = files[c]
                for issue in f["issue_type_frequencies"]:
                    ids = [cid for h in f["hint_sources"].values() for cid in h][:3] or f["case_ids"][:3]
                    defect = "incorrect" if issue in ("incorrect", "outdated", "contradictory") else "missing"
                    attrs.append({"category_issue": f"{c}:{issue}", "defect_kind": defect, "location": location(c), "evidence_case_ids": ids})
            return {"action": "submit_attributions", "attributions": attrs}
        order = sorted(cats, key=lambda c: (-files[c]["case_count"], ("knowledge", "tool", "clarification", "style").index(c)))
        plan = []
        for i, c in enumerate(order, 1):
            f = files[c]
            plan.append(
                {
                    "priority": i,
                    "addresses": [{"issue": f"{c}:{k}", "count": n} for k, n in f["issue_type_frequencies"].items()],
                    "locations": [location(c)],
                    "change_description": f"Add the {c} guidance the failing cases were missing.",
                    "modifications": list(f["aggregated_hints"]),
                    "needs_knowledge_search": c == "knowledge",
                    "search_queries": [f"{SCENARIO} {c} guidance"] if c == "knowledge" else [],
                    "needs_examples": False,
                    "expected_impact": f"resolves up to {f['case_count']} {c} cases",
                    "risk": "low",
                    "defect_kind": "missing",
                }
            )
        return {"action": "submit_plan", "plan": plan}

    # -- optimizer -----------------------------------------------------------

    def _optimize(self, req: ChatRequest) -> dict[str, Any]:
        p = _payload(req.last_user)
        titles = [o["title"] for o in p["skill_outline"]]
        edits = []
        kind_map = {"knowledge": "knowledge", "tool": "tool_rule", "clarification": "clarification_rule", "style": "style_rule"}
        for cat, ev in p["evidence"].items():
            for h in ev["hints"]:
                rule = self.world.rule_for_hint(h["hint"])
                if rule is None:
                    continue
                case = self.world.cases[rule.case]
                section = next((t for t in titles if case.label.lower() in t.lower()), "")
                edit = {"content_kind": kind_map[rule.kind], "content": rule.text, "case_ids": h["case_ids"][:3], "issue": f"{rule.kind}:{rule.issue}"}
                if rule.tool:
                    edit["tool"] = rule.tool
                if section and rule.kind in ("tool", "clarification"):
                    edit["section"] = section
                edits.append(edit)
        return {"edits": edits}


def world_from_corpus(tickets: Sequence[Ticket]) -> World:
    w = World()
    w.ingest(tickets)
    return w


def export_world(path: str | Path) -> None:
    """Dump the rule table for inspection."""
    Path(path).write_text(json.dumps([asdict(r) for r in build_rules().values()], indent=1) + "\n", encoding="utf-8")


def utc(ts: str) -> datetime:
    return parse_ts(ts).astimezone(timezone.utc)
