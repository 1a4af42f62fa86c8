"""Static checks over a parsed policy.

Produces :class:`Diagnostic` records; never raises.  Codes:

* ``E001``: selections reference a tag with no such sub-clause,
* ``E002``: a sub-clause redeclares a tag after an always-true
  (empty-conditionals) branch of the same tag, so it can never be
  consulted.  Redeclaring a tag after *conditional* branches is the
  legitimate fallback idiom and is not flagged.
* ``W001``: a share/acquire clause is shadowed by an earlier clause of
  the same kind with empty conditionals whose member list covers it
  (top-down matching makes the later clause unreachable),
* ``W002``: a declared sub-clause tag is never referenced.
"""

from __future__ import annotations

from curie.cpl import ast


def validate(policy: ast.PolicyAst) -> list[ast.Diagnostic]:
    diags: list[ast.Diagnostic] = []
    sub_groups: dict[str, list[ast.Clause]] = {}
    for tag, sub in policy.sub_clauses:
        group = sub_groups.setdefault(tag, [])
        if any(not prior.conditionals for prior in group):
            diags.append(ast.Diagnostic(
                ast.Severity.ERROR, sub.span, "E002",
                f"sub-clause '{tag}' redeclared after an unconditional "
                f"'{tag}' branch; it can never be consulted",
            ))
        group.append(sub)

    referenced: set[str] = set()
    for stmt in policy.statements:
        if not isinstance(stmt, ast.Clause):
            continue
        sel = stmt.selections
        if isinstance(sel, ast.TagRef):
            referenced.add(sel.tag)
            if sel.tag not in sub_groups:
                diags.append(ast.Diagnostic(
                    ast.Severity.ERROR, sel.span, "E001",
                    f"selections reference undeclared sub-clause '{sel.tag}'",
                ))

    for tag, subs in sub_groups.items():
        if tag not in referenced:
            diags.append(ast.Diagnostic(
                ast.Severity.WARNING, subs[0].span, "W002",
                f"sub-clause '{tag}' is never referenced",
            ))

    # Shadowing: an earlier same-kind clause with no conditionals always
    # matches, so any later clause whose members it covers is dead.
    blockers: dict[ast.ClauseKind, list[ast.Clause]] = {}
    for clause in policy.clauses:
        for blocker in blockers.get(clause.kind, ()):
            covers = (not blocker.members
                      or (clause.members
                          and set(clause.members) <= set(blocker.members)))
            if covers:
                who = ", ".join(clause.members) if clause.members else "all members"
                diags.append(ast.Diagnostic(
                    ast.Severity.WARNING, clause.span, "W001",
                    f"{clause.kind.value} clause for {who} is shadowed by an "
                    f"unconditional earlier clause at line {blocker.span.line}",
                ))
                break
        if not clause.conditionals:
            blockers.setdefault(clause.kind, []).append(clause)

    diags.sort(key=lambda d: (d.span.start, d.code))
    return diags


def has_errors(diags: list[ast.Diagnostic]) -> bool:
    return any(d.severity is ast.Severity.ERROR for d in diags)
