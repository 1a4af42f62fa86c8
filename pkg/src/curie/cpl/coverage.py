"""Grammar-production coverage tracking.

Maps a parsed policy to the set of grammar productions its source
exercises, so the corpus test can assert every production is covered
by at least one file.
"""

from __future__ import annotations

from curie.cpl import ast

REQUIRED_PRODUCTIONS = frozenset({
    "curie_policy",
    "statements",
    "statement",
    "share_clause",
    "acquire_clause",
    "attribute",
    "sub_clause",
    "conditional_comparison",
    "conditional_evaluate",
    "selections_filters",
    "selections_tag",
    "selections_empty",
    "filter",
    "data_ref",
    "alg_intersection_size",
    "alg_jaccard_index",
    "alg_pearson_correlation",
    "alg_cosine_similarity",
    "threshold_arg",
    "operation_eq",
    "operation_lt",
    "operation_gt",
    "operation_neq",
    "operation_in",
    "value_list",
    "value_list_braced",
    "members",
    "members_empty",
    "member",
    "identifier",
    "var",
    "size_of_data",
    "value_string",
    "value_identifier",
    "value_number",
    "floating_point_number",
    "decimal_number",
    "tag",
    "word",
})

_ALG_PRODUCTION = {
    ast.Algorithm.INTERSECTION_SIZE: "alg_intersection_size",
    ast.Algorithm.JACCARD_INDEX: "alg_jaccard_index",
    ast.Algorithm.PEARSON_CORRELATION: "alg_pearson_correlation",
    ast.Algorithm.COSINE_SIMILARITY: "alg_cosine_similarity",
}

_OP_PRODUCTION = {
    "=": "operation_eq",
    "<": "operation_lt",
    ">": "operation_gt",
    "!=": "operation_neq",
    "in": "operation_in",
}


def _value_productions(v: ast.Value, used: set[str]) -> None:
    if isinstance(v.data, bool):
        used.add("value_identifier")
    elif isinstance(v.data, int):
        used.update({"value_number", "decimal_number"})
    elif isinstance(v.data, float):
        used.update({"value_number", "floating_point_number", "decimal_number"})
    elif v.quoted:
        used.add("value_string")
    else:
        used.update({"value_identifier", "identifier", "word"})


def _rhs_productions(rhs: ast.Value | ast.VarRef, used: set[str]) -> None:
    if isinstance(rhs, ast.VarRef):
        used.update({"var", "identifier", "word"})
    else:
        _value_productions(rhs, used)


def productions_used(policy: ast.PolicyAst, source: str | None = None) -> frozenset[str]:
    used: set[str] = {"curie_policy", "statements", "statement"}
    for stmt in policy.statements:
        if isinstance(stmt, ast.Attribute):
            used.update({"attribute", "identifier", "word"})
            if len(stmt.values) > 1:
                used.add("value_list")
            for v in stmt.values:
                _value_productions(v, used)
            continue

        if stmt.kind is ast.ClauseKind.SHARE:
            used.add("share_clause")
        elif stmt.kind is ast.ClauseKind.ACQUIRE:
            used.add("acquire_clause")
        else:
            used.update({"sub_clause", "tag", "identifier", "word"})

        if stmt.kind is not ast.ClauseKind.SUB:
            if stmt.members:
                used.update({"members", "member", "identifier", "word"})
            else:
                used.add("members_empty")

        for cond in stmt.conditionals:
            if isinstance(cond, ast.Evaluate):
                used.update({
                    "conditional_evaluate", "data_ref", "threshold_arg",
                    _ALG_PRODUCTION[cond.algorithm],
                    "identifier", "word",
                })
                if cond.threshold != int(cond.threshold):
                    used.add("floating_point_number")
                used.add("decimal_number")
            else:
                used.add("conditional_comparison")
                used.add(_OP_PRODUCTION[cond.op])
                if isinstance(cond.lhs, ast.VarRef):
                    used.update({"var", "identifier", "word"})
                elif isinstance(cond.lhs, ast.SizeOfData):
                    used.add("size_of_data")
                else:
                    used.update({"identifier", "word"})
                _rhs_productions(cond.rhs, used)

        sel = stmt.selections
        if isinstance(sel, ast.TagRef):
            used.update({"selections_tag", "tag", "identifier", "word"})
        elif sel.items:
            used.update({"selections_filters", "filter"})
            for f in sel.items:
                used.add(_OP_PRODUCTION[f.op])
                used.update({"identifier", "word"})
                if f.is_var:
                    used.add("var")
                _rhs_productions(f.value, used)
        else:
            used.add("selections_empty")

    if source is not None and "{" in source:
        used.add("value_list_braced")
    return frozenset(used)
