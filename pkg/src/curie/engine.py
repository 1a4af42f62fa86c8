"""Clause resolution and pairwise/consortium policy negotiation.

Clauses of a given kind are consulted top-down; the first clause whose
member list covers the counterparty and whose conditionals all hold is
the match.  A failing conditional (plain or data-dependent) moves
matching to the next clause, which is how fallback chains work.

Negotiation is owner-driven: the requester sends its acquire policy,
public profile, and blinded column payloads in one request; the owner
resolves both sides (its own share clauses against the requester, the
requester's acquire clauses against itself), AND-merges the matched
clauses, and returns the agreement.  This keeps the message count at
one request plus one response per directed pair; data-dependent
conditionals ride along rather than costing extra messages.

The merge is conservative: merged conditionals are the union (logical
AND) of both sides' conditionals and merged selections the conjunction
of both sides' filters, so no member's data is ever released beyond
its own share clause's intent.
"""

from __future__ import annotations

import json
import random
import time
from dataclasses import dataclass, field
from typing import Callable, Mapping, Sequence

from curie.cpl import ast
from curie.cpl.parser import parse_policy
from curie.cpl.serializer import format_conditional, serialize
from curie.data import (Dataset, RowFilter, SchemaMismatch, apply_selections,
                        check_shared_schema)
from curie.ddstats import (
    BlindedColumn,
    blind_column,
    compute_statistic,
    evaluate_blinded,
    resolve_comparator,
)
from curie.errors import CurieError
from curie.transport import MessageLog


class EnvError(CurieError):
    pass


class CycleError(CurieError):
    pass


FULL = "full"
PARTIAL = "partial"
EMPTY = "empty"


# --------------------------------------------------------------------------
# member contexts and evaluation environments

@dataclass(frozen=True)
class PublicProfile:
    """What a member discloses during negotiation: identity, plain
    attributes, alliance memberships, and dataset row count."""

    member_id: str
    attributes: Mapping[str, object] = field(default_factory=dict)
    alliances: frozenset[str] = frozenset()
    data_size: int = 0

    def to_json(self) -> dict:
        return {
            "member_id": self.member_id,
            "attributes": dict(self.attributes),
            "alliances": sorted(self.alliances),
            "data_size": self.data_size,
        }

    @classmethod
    def from_json(cls, obj: Mapping) -> "PublicProfile":
        return cls(obj["member_id"], dict(obj["attributes"]),
                   frozenset(obj["alliances"]), int(obj["data_size"]))


@dataclass(frozen=True)
class MemberContext:
    member_id: str
    policy: ast.PolicyAst
    dataset: Dataset
    attributes: Mapping[str, object] = field(default_factory=dict)
    alliances: frozenset[str] = frozenset()

    @property
    def profile(self) -> PublicProfile:
        return PublicProfile(self.member_id, dict(self.attributes),
                             self.alliances, self.dataset.n)


@dataclass(frozen=True)
class EvalEnv:
    """Environment a clause's conditionals evaluate against.

    ``own`` is the profile of the policy's author, ``counterparty`` the
    member being vetted; ``own_attributes`` are the author's policy
    attribute constants.  Variable lookup tries the author's constants
    first, then the counterparty's attributes.
    """

    own: PublicProfile
    counterparty: PublicProfile
    own_attributes: Mapping[str, tuple] = field(default_factory=dict)

    def lookup(self, name: str):
        if name in self.own_attributes:
            vals = tuple(v.as_python() for v in self.own_attributes[name])
            return vals[0] if len(vals) == 1 else vals
        if name in self.counterparty.attributes:
            return self.counterparty.attributes[name]
        raise EnvError(f"unbound variable ${name}")

    def lookup_list(self, name: str) -> tuple | None:
        try:
            v = self.lookup(name)
        except EnvError:
            return None
        return v if isinstance(v, tuple) else (v,)

    def alliances_of(self, member_id: str) -> frozenset[str]:
        if member_id == self.counterparty.member_id:
            return self.counterparty.alliances
        if member_id == self.own.member_id:
            return self.own.alliances
        raise EnvError(f"unknown member {member_id!r} in alliance test")


def _comparable(a, b) -> bool:
    num = (int, float)
    if isinstance(a, bool) or isinstance(b, bool):
        return isinstance(a, bool) and isinstance(b, bool)
    if isinstance(a, num) and isinstance(b, num):
        return True
    return isinstance(a, str) and isinstance(b, str)


def eval_conditional(cond: ast.Comparison, env: EvalEnv) -> bool:
    """Evaluate a plain (non data-dependent) conditional.

    ``in`` tests set membership: against an attribute value list when
    the right side names one, otherwise against the named alliance of
    the member on the left.  Other comparisons use the operands'
    natural order and raise TypeError when the operands are of
    different kinds.
    """
    if isinstance(cond.lhs, ast.SizeOfData):
        lhs_value: object = env.counterparty.data_size
    elif isinstance(cond.lhs, ast.VarRef):
        lhs_value = env.lookup(cond.lhs.name)
    else:
        lhs_value = cond.lhs.name

    if cond.op == "in":
        if not isinstance(cond.rhs, ast.VarRef):
            raise TypeError("'in' requires a $variable on the right")
        values = env.lookup_list(cond.rhs.name)
        if values is not None:
            return lhs_value in values
        # fall back to alliance membership: "M2 in $EU"
        if not isinstance(lhs_value, str):
            raise TypeError(f"cannot test {lhs_value!r} for alliance membership")
        return cond.rhs.name in env.alliances_of(lhs_value)

    rhs_value = (env.lookup(cond.rhs.name) if isinstance(cond.rhs, ast.VarRef)
                 else cond.rhs.as_python())
    if not _comparable(lhs_value, rhs_value):
        raise TypeError(
            f"incomparable operands {lhs_value!r} and {rhs_value!r}")
    if cond.op == "=":
        return lhs_value == rhs_value
    if cond.op == "!=":
        return lhs_value != rhs_value
    if cond.op == "<":
        return lhs_value < rhs_value
    if cond.op == ">":
        return lhs_value > rhs_value
    raise TypeError(f"unsupported operation {cond.op!r}")


# --------------------------------------------------------------------------
# clause resolution

DDEvaluator = Callable[[ast.Evaluate], bool]

_NO_BRANCH = object()  # tag group exists but no branch matched


@dataclass(frozen=True)
class ResolvedClause:
    index: int                      # position among the policy's clauses
    clause: ast.Clause
    filters: tuple[RowFilter, ...]
    deferred: tuple[ast.Evaluate, ...] = ()


def _resolve_filter(f: ast.Filter, env: EvalEnv) -> RowFilter:
    if isinstance(f.value, ast.VarRef):
        value = env.lookup(f.value.name)
        if f.op == "in" and not isinstance(value, tuple):
            value = (value,)
    else:
        value = f.value.as_python()
        if f.op == "in":
            value = (value,)
    return RowFilter(f.column, f.op, value)


def _expand_selections(policy: ast.PolicyAst, selections: ast.Selections,
                       env: EvalEnv, dd_eval: DDEvaluator | None,
                       visited: frozenset[str]):
    if isinstance(selections, ast.Filters):
        return tuple(_resolve_filter(f, env) for f in selections.items)
    tag = selections.tag
    if tag in visited:
        raise CycleError(f"sub-clause expansion revisits tag {tag!r}")
    branches = [sub for t, sub in policy.sub_clauses if t == tag]
    if not branches:
        raise EnvError(f"selections reference undeclared sub-clause {tag!r}")
    for sub in branches:
        ok = True
        for cond in sub.conditionals:
            if isinstance(cond, ast.Evaluate):
                if dd_eval is None:
                    raise EnvError(
                        "data-dependent conditional inside sub-clause "
                        f"{tag!r} requires an evaluator")
                if not dd_eval(cond):
                    ok = False
                    break
            elif not eval_conditional(cond, env):
                ok = False
                break
        if ok:
            return _expand_selections(policy, sub.selections, env, dd_eval,
                                      visited | {tag})
    return _NO_BRANCH


def iter_matching_clauses(policy: ast.PolicyAst, kind: ast.ClauseKind,
                          counterparty: str, env: EvalEnv,
                          dd_eval: DDEvaluator | None = None):
    """Yield :class:`ResolvedClause` for every clause that matches under
    top-down evaluation, in order.  Clauses whose conditionals fail (or
    whose tag group offers no live branch) are skipped, implementing
    fallback."""
    for index, clause in enumerate(policy.clauses):
        if clause.kind is not kind:
            continue
        if clause.members and counterparty not in clause.members:
            continue
        deferred: list[ast.Evaluate] = []
        ok = True
        for cond in clause.conditionals:
            if isinstance(cond, ast.Evaluate):
                if dd_eval is None:
                    deferred.append(cond)
                elif not dd_eval(cond):
                    ok = False
                    break
            elif not eval_conditional(cond, env):
                ok = False
                break
        if not ok:
            continue
        filters = _expand_selections(policy, clause.selections, env, dd_eval,
                                     frozenset())
        if filters is _NO_BRANCH:
            continue
        yield ResolvedClause(index, clause, filters, tuple(deferred))


def resolve_clause(policy: ast.PolicyAst, kind: ast.ClauseKind,
                   counterparty: str, env: EvalEnv,
                   dd_eval: DDEvaluator | None = None) -> ResolvedClause | None:
    """First matching clause of *kind* for *counterparty*, with fully
    expanded selections, or None when nothing matches.

    Without a *dd_eval*, clause-level data-dependent conditionals are
    returned unevaluated in ``deferred``; a data-dependent conditional
    inside a sub-clause raises :class:`EnvError` since branch choice
    cannot be deferred.
    """
    return next(iter_matching_clauses(policy, kind, counterparty, env, dd_eval),
                None)


# --------------------------------------------------------------------------
# agreements

@dataclass(frozen=True)
class Agreement:
    """Resolved directed data-flow contract (owner releases to requester)."""

    owner: str
    requester: str
    status: str
    selections: tuple[RowFilter, ...] = ()
    conditionals: tuple[ast.Conditional, ...] = ()
    provenance: tuple[int, int] | None = None  # (owner idx, requester idx)
    reason: str | None = None
    dd_trace: tuple[dict, ...] = ()
    released_rows: int = 0

    def to_json(self) -> dict:
        return {
            "owner": self.owner,
            "requester": self.requester,
            "status": self.status,
            "selections": [f.to_json() for f in self.selections],
            "conditionals": [format_conditional(c) for c in self.conditionals],
            "provenance": list(self.provenance) if self.provenance else None,
            "reason": self.reason,
            "dd_trace": list(self.dd_trace),
            "released_rows": self.released_rows,
        }


@dataclass(frozen=True)
class AcquireRequest:
    """Everything the owner needs to answer in a single round trip."""

    requester: PublicProfile
    policy: ast.PolicyAst
    blinded: Mapping[str, BlindedColumn] = field(default_factory=dict)
    plain: Mapping[str, tuple] = field(default_factory=dict)
    mode: str = "blinded"

    def to_payload(self) -> bytes:
        body = {
            "requester": self.requester.to_json(),
            "policy": serialize(self.policy),
            "mode": self.mode,
        }
        if self.mode == "blinded":
            body["blinded"] = {c: b.to_payload() for c, b in sorted(self.blinded.items())}
        else:
            body["plain"] = {c: list(v) for c, v in sorted(self.plain.items())}
        return json.dumps(body, sort_keys=True).encode()

    @classmethod
    def from_payload(cls, payload: bytes) -> "AcquireRequest":
        body = json.loads(payload.decode())
        blinded = {c: BlindedColumn.from_payload(p)
                   for c, p in body.get("blinded", {}).items()}
        plain = {c: tuple(v) for c, v in body.get("plain", {}).items()}
        return cls(PublicProfile.from_json(body["requester"]),
                   parse_policy(body["policy"]), blinded, plain, body["mode"])


def build_request(requester: MemberContext, owner_id: str,
                  mode: str = "blinded",
                  rng: random.Random | None = None) -> AcquireRequest:
    """Requester-side request assembly.

    Blinded payloads are prepared for every schema column so the owner
    can evaluate data-dependent conditionals from either side's policy
    without another round trip.
    """
    if mode == "blinded":
        rng = rng or random.Random()
        blinded = {
            c.name: blind_column(c.name, requester.dataset.column(c.name), rng)
            for c in requester.dataset.schema.columns
        }
        return AcquireRequest(requester.profile, requester.policy, blinded=blinded)
    if mode == "plain":
        plain = {c.name: tuple(requester.dataset.column(c.name))
                 for c in requester.dataset.schema.columns}
        return AcquireRequest(requester.profile, requester.policy,
                              plain=plain, mode="plain")
    raise ValueError(f"unknown negotiation mode {mode!r}")


def _make_dd_eval(request: AcquireRequest, owner: MemberContext,
                  comparator, trace: list[dict], audit: bool,
                  timings: dict | None = None) -> DDEvaluator:
    cmp = resolve_comparator(comparator)

    def dd_eval(cond: ast.Evaluate) -> bool:
        column = cond.data_ref
        if not owner.dataset.schema.has_column(column):
            raise EnvError(f"data reference &{column} is not a schema column")
        owner_values = owner.dataset.column(column)
        t0 = time.perf_counter()
        if request.mode == "blinded":
            stat = evaluate_blinded(cond.algorithm, request.blinded[column],
                                    owner_values)
        else:
            stat = compute_statistic(cond.algorithm, request.plain[column],
                                     owner_values)
        if timings is not None:
            timings["dd"] = timings.get("dd", 0.0) + time.perf_counter() - t0
        decision = cmp(stat, cond.threshold)
        entry = {
            "algorithm": cond.algorithm.value,
            "column": column,
            "threshold": cond.threshold,
            "decision": decision,
        }
        if audit:
            entry["statistic"] = stat
        trace.append(entry)
        return decision

    return dd_eval


def answer_request(owner: MemberContext, request: AcquireRequest,
                   comparator="below", audit: bool = False,
                   timings: dict | None = None) -> Agreement:
    """Owner-side negotiation: resolve both sides, AND-merge, classify.

    Status is data-relative on the owner's current dataset: ``full``
    when the merged selections release every row, ``partial`` for a
    proper nonempty subset, ``empty`` otherwise (including no matching
    clause on either side).
    """
    requester = request.requester
    trace: list[dict] = []
    dd_eval = _make_dd_eval(request, owner, comparator, trace, audit, timings)

    acquire_env = EvalEnv(requester, owner.profile,
                          request.policy.attribute_map())
    acquired = resolve_clause(request.policy, ast.ClauseKind.ACQUIRE,
                              owner.member_id, acquire_env, dd_eval)
    if acquired is None:
        return Agreement(owner.member_id, requester.member_id, EMPTY,
                         reason="no acquire clause matched",
                         dd_trace=tuple(trace))

    share_env = EvalEnv(owner.profile, requester, owner.policy.attribute_map())
    shared = resolve_clause(owner.policy, ast.ClauseKind.SHARE,
                            requester.member_id, share_env, dd_eval)
    if shared is None:
        return Agreement(owner.member_id, requester.member_id, EMPTY,
                         reason="no share clause matched",
                         dd_trace=tuple(trace))

    selections = shared.filters + acquired.filters
    conditionals = shared.clause.conditionals + acquired.clause.conditionals
    released = apply_selections(owner.dataset, selections)
    if released.n == 0:
        status = EMPTY
    elif released.n == owner.dataset.n:
        status = FULL
    else:
        status = PARTIAL
    return Agreement(
        owner.member_id, requester.member_id, status,
        selections=selections,
        conditionals=conditionals,
        provenance=(shared.index, acquired.index),
        dd_trace=tuple(trace),
        released_rows=released.n,
    )


def negotiate_pair(requester: MemberContext, owner: MemberContext,
                   mode: str = "blinded", comparator="below",
                   rng: random.Random | None = None,
                   audit: bool = False) -> Agreement:
    """Negotiate one directed pair (requester acquires from owner)."""
    report = check_shared_schema(requester.dataset.schema, owner.dataset.schema)
    if report:
        raise SchemaMismatch("; ".join(report))
    request = build_request(requester, owner.member_id, mode, rng)
    return answer_request(owner, request, comparator, audit)


def _names_counterparty(policy: ast.PolicyAst, owner_id: str) -> bool:
    return any(
        c.kind is ast.ClauseKind.ACQUIRE and (not c.members or owner_id in c.members)
        for c in policy.clauses
    )


def negotiate_consortium(contexts: Sequence[MemberContext],
                         mode: str = "blinded", comparator="below",
                         rng: random.Random | None = None,
                         audit: bool = False,
                         log: MessageLog | None = None,
                         timings: dict | None = None,
                         ) -> tuple[list[Agreement], MessageLog]:
    """Run all pairwise negotiations.

    For every ordered (requester, owner) pair the requester's policy
    names, exactly one request and one response message are logged;
    per-pair failures become empty agreements with a reason.  The
    result is deterministic given the contexts and rng.
    """
    if len(contexts) < 2:
        raise ValueError("a consortium needs at least two members")
    ids = [c.member_id for c in contexts]
    if len(set(ids)) != len(ids):
        raise ValueError("duplicate member ids")
    base = contexts[0].dataset.schema
    for ctx in contexts[1:]:
        report = check_shared_schema(base, ctx.dataset.schema)
        if report:
            raise SchemaMismatch(
                f"{contexts[0].member_id} vs {ctx.member_id}: " + "; ".join(report))

    rng = rng or random.Random(0)
    log = log if log is not None else MessageLog()
    by_id = {c.member_id: c for c in contexts}
    agreements: list[Agreement] = []
    for requester_id in ids:
        requester = by_id[requester_id]
        for owner_id in ids:
            if owner_id == requester_id:
                continue
            if not _names_counterparty(requester.policy, owner_id):
                continue
            owner = by_id[owner_id]
            request = build_request(requester, owner_id, mode, rng)
            log.send(requester_id, owner_id, "acquire_request", request.to_payload())
            try:
                agreement = answer_request(owner, request, comparator, audit,
                                           timings=timings)
            except (CurieError, TypeError) as exc:
                agreement = Agreement(owner_id, requester_id, EMPTY,
                                      reason=f"negotiation error: {exc}")
            log.send(owner_id, requester_id, "negotiation_output",
                     json.dumps(agreement.to_json(), sort_keys=True).encode())
            agreements.append(agreement)
    return agreements, log
