import pytest

from curie.cpl import (
    Algorithm,
    Attribute,
    Clause,
    ClauseKind,
    Comparison,
    Evaluate,
    Filters,
    MemberRef,
    ParseError,
    SizeOfData,
    TagRef,
    Value,
    VarRef,
    parse_policy,
)

M1_M2_POLICY = """
acquire : M2 : :: age > 25 ;
share : M2 : :: ;
acquire : M1 : :: ;
share : M1 : M1 in $NATO, M1 in $EU :: fine-select ;
fine-select : $continent = "North America" :: race = White ;
fine-select : :: race = Asian ;
"""


def test_worked_example_clause_and_subclause_counts():
    ast = parse_policy(M1_M2_POLICY)
    assert len(ast.clauses) == 4
    assert len(ast.sub_clauses) == 2
    assert [t for t, _ in ast.sub_clauses] == ["fine-select", "fine-select"]
    m1_clauses = [c for c in ast.clauses if c.members == ("M2",)]
    assert len(m1_clauses) == 2


def test_acquire_with_alliance_conditional():
    ast = parse_policy("acquire : M3 : M3 in $NATO :: ;")
    (clause,) = ast.clauses
    assert clause.kind is ClauseKind.ACQUIRE
    assert clause.members == ("M3",)
    (cond,) = clause.conditionals
    assert cond == Comparison(MemberRef("M3"), "in", VarRef("NATO"))
    assert clause.selections == Filters(())


def test_empty_input_is_a_parse_error():
    with pytest.raises(ParseError):
        parse_policy("")
    with pytest.raises(ParseError):
        parse_policy("   # only a comment\n")


def test_evaluate_conditional_fields():
    ast = parse_policy('share : M1 : evaluate(&genotype, "Intersection size", 10) :: ;')
    (cond,) = ast.clauses[0].conditionals
    assert isinstance(cond, Evaluate)
    assert cond.data_ref == "genotype"
    assert cond.algorithm is Algorithm.INTERSECTION_SIZE
    assert cond.threshold == 10.0


@pytest.mark.parametrize("text,algorithm", [
    ("'Jaccard index'", Algorithm.JACCARD_INDEX),
    ("'Jaccard'", Algorithm.JACCARD_INDEX),
    ("'intersection size'", Algorithm.INTERSECTION_SIZE),
    ("'Pearson correlation'", Algorithm.PEARSON_CORRELATION),
    ("'Cosine similarity'", Algorithm.COSINE_SIMILARITY),
])
def test_algorithm_name_aliases(text, algorithm):
    ast = parse_policy(f"share : M1 : evaluate(&col, {text}, 0.5) :: ;")
    assert ast.clauses[0].conditionals[0].algorithm is algorithm


def test_unknown_algorithm_rejected():
    with pytest.raises(ParseError) as err:
        parse_policy("share : M1 : evaluate(&col, 'Hamming', 0.5) :: ;")
    assert "Hamming" in str(err.value)


def test_size_of_data_builtin():
    ast = parse_policy("share : M2 : size(data) > 1K :: ;")
    (cond,) = ast.clauses[0].conditionals
    assert isinstance(cond.lhs, SizeOfData)
    assert cond.rhs == Value(1000)


def test_attribute_single_and_list():
    ast = parse_policy('x := <"a"> ;\ny := <"a", "b"> ;')
    attrs = ast.attributes
    assert attrs[0] == Attribute("x", (Value("a", quoted=True),))
    assert attrs[1].values == (Value("a", quoted=True), Value("b", quoted=True))


def test_attribute_braced_value_list():
    ast = parse_policy('r := <{"EU"}, {"NATO"}> ;')
    assert [v.data for v in ast.attributes[0].values] == ["EU", "NATO"]


def test_tag_selection_vs_filter_disambiguation():
    ast = parse_policy("share : M1 : :: fine-select ;\nfine-select : :: age > 1 ;")
    assert ast.clauses[0].selections == TagRef("fine-select")
    ast = parse_policy("share : M1 : :: age > 1 ;")
    assert isinstance(ast.clauses[0].selections, Filters)


def test_sub_clause_has_no_members_field():
    ast = parse_policy("t : age > 1 :: ;")
    (tag, sub) = ast.sub_clauses[0]
    assert tag == "t"
    assert sub.members == ()
    assert sub.kind is ClauseKind.SUB
    with pytest.raises(ValueError):
        Clause(ClauseKind.SUB, members=("M1",), tag="t")


def test_first_error_is_reported_with_expected_set():
    with pytest.raises(ParseError) as err:
        parse_policy("share : M1 : :: age >> 25 ;")
    assert err.value.span.line == 1
    assert err.value.expected


def test_missing_semicolon():
    with pytest.raises(ParseError) as err:
        parse_policy("share : M1 : :: ")
    assert "';'" in err.value.expected


def test_filters_with_all_operations():
    ast = parse_policy(
        "share : : :: a = 1, b < 2, c > 3, d != x, e in $grp ;\n"
        'grp := <"u"> ;')
    ops = [f.op for f in ast.clauses[0].selections.items]
    assert ops == ["=", "<", ">", "!=", "in"]


def test_multiple_statements_preserve_order():
    ast = parse_policy(
        'a := <"1"> ;\nshare : M1 : :: ;\nt : :: ;\nacquire : M2 : :: ;')
    names = [type(s).__name__ for s in ast.statements]
    assert names == ["Attribute", "Clause", "Clause", "Clause"]
    assert ast.statements[2].kind is ClauseKind.SUB
