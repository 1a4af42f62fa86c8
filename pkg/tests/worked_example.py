"""The three-member worked negotiation example, as a reusable fixture.

Datasets are hand-built so every data-dependent statistic is exact and
the expected agreements can be derived by hand.  Two knobs drive the
traced variants:

* ``m1_continent``: toggles the fine-select branch (s2 vs s3),
* ``genotype_overlap``: "small" keeps the intersection-size gate true,
  "large" forces the fallback share clause (weight > 150).
"""

from __future__ import annotations

from curie.cpl import parse_policy
from curie.data import Column, ColumnType, Schema, from_rows
from curie.engine import MemberContext

M1_POLICY = """
acquire : M2 : :: age > 25 ;
share : M2 : :: ;
acquire : M3 : evaluate(&age, "Jaccard index", 0.3) :: race = Asian ;
share : M3 : :: ;
"""

M2_POLICY = """
natoeu := <"US", "UK", "DE"> ;
acquire : M1 : :: ;
share : M1 : M1 in $NATO, M1 in $EU :: fine-select ;
fine-select : $continent = "North America" :: country in $natoeu ;
fine-select : :: race = White ;
acquire : M3 : M3 in $NATO :: ;
share : M3 : :: ;
"""

M3_POLICY = """
acquire : M1 : :: genotype = "A/A" ;
share : M1 : evaluate(&genotype, "Intersection size", 10) :: ;
share : M1 : :: weight > 150 ;
acquire : M2 : :: ;
share : M2 : M2 in $EU, size(data) > 1K :: ;
"""

GENOTYPES = tuple(["A/A", "A/G", "G/G"] + [f"g{i:02d}" for i in range(4, 15)])


def schema() -> Schema:
    return Schema((
        Column("age", ColumnType("integer", bounds=(18, 90))),
        Column("race", ColumnType("categorical", ("Asian", "Black", "White"))),
        Column("genotype", ColumnType("categorical", GENOTYPES)),
        Column("weight", ColumnType("real", bounds=(80.0, 260.0))),
        Column("country", ColumnType("categorical", ("US", "UK", "DE", "FR"))),
        Column("dose", ColumnType("real", bounds=(1.0, 90.0))),
    ), target="dose")


def _row(age, race, genotype, weight, country, dose=30.0):
    return dict(age=age, race=race, genotype=genotype, weight=weight,
                country=country, dose=dose)


def build_contexts(m1_continent: str = "North America",
                   genotype_overlap: str = "small"):
    sch = schema()
    if genotype_overlap == "small":
        m1_genotypes = ["A/A", "A/G", "A/A", "A/G"]
        m3_genotypes = ["g04", "g05", "g06", "g07"]
    elif genotype_overlap == "large":
        shared = [g for g in GENOTYPES if g not in ("A/G", "G/G")]  # 12 values
        m1_genotypes = list(shared)
        m3_genotypes = list(shared)
    else:
        raise ValueError(genotype_overlap)

    # ages: M1 in the twenties/forties, M3 in the sixties+ so the
    # distinct-value Jaccard index stays well under 0.3
    m1_rows = [
        _row(30, "White", m1_genotypes[0 % len(m1_genotypes)], 160.0, "US"),
        _row(22, "Asian", m1_genotypes[1 % len(m1_genotypes)], 120.0, "US"),
        _row(40, "Black", m1_genotypes[2 % len(m1_genotypes)], 200.0, "US"),
        _row(41, "Asian", m1_genotypes[3 % len(m1_genotypes)], 150.0, "UK"),
    ]
    for i, g in enumerate(m1_genotypes[4:]):
        m1_rows.append(_row(24 + i % 3, "White", g, 140.0, "US"))

    m3_rows = [
        _row(60, "Asian", m3_genotypes[0 % len(m3_genotypes)], 155.0, "UK"),
        _row(65, "Asian", m3_genotypes[1 % len(m3_genotypes)], 149.0, "UK"),
        _row(70, "White", m3_genotypes[2 % len(m3_genotypes)], 180.0, "UK"),
        _row(75, "Asian", m3_genotypes[3 % len(m3_genotypes)], 200.0, "US"),
    ]
    for i, g in enumerate(m3_genotypes[4:]):
        m3_rows.append(_row(61 + i % 4, "Black", g, 130.0, "UK"))

    # M2: 1200 rows so size(data) > 1K holds; country and age spread so
    # the natoeu + age>25 merge is a proper nonempty restriction
    m2_rows = []
    countries = ("US", "UK", "DE", "FR")
    races = ("Asian", "Black", "White")
    for i in range(1200):
        m2_rows.append(_row(
            20 + i % 50,
            races[i % 3],
            ("A/A", "A/G", "G/G")[i % 3],
            100.0 + (i % 120),
            countries[i % 4],
        ))

    m1 = MemberContext(
        "M1", parse_policy(M1_POLICY), from_rows(sch, m1_rows, "M1"),
        attributes={"country": "US", "continent": m1_continent},
        alliances=frozenset({"NATO", "EU"}))
    m2 = MemberContext(
        "M2", parse_policy(M2_POLICY), from_rows(sch, m2_rows, "M2"),
        attributes={"country": "DE", "continent": "Europe"},
        alliances=frozenset({"EU", "NATO"}))
    m3 = MemberContext(
        "M3", parse_policy(M3_POLICY), from_rows(sch, m3_rows, "M3"),
        attributes={"country": "UK", "continent": "Europe"},
        alliances=frozenset({"NATO"}))
    return m1, m2, m3


# hand-derived expected agreements for the default knobs
# (filters as (column, op, value) triples, owner-side first)
EXPECTED_DEFAULT = {
    ("M1", "M2"): {  # requester M1 <- owner M2: fine-select branch s2
        "status": "partial",
        "filters": [("country", "in", ("US", "UK", "DE")), ("age", ">", 25)],
        "provenance_owner_clause": 1,   # M2's share-to-M1
        "provenance_requester_clause": 0,
    },
    ("M2", "M1"): {  # requester M2 <- owner M1: unconditional full share
        "status": "full",
        "filters": [],
        "provenance_owner_clause": 1,
        "provenance_requester_clause": 0,
    },
    ("M1", "M3"): {  # both data-dependent gates true
        "status": "partial",
        "filters": [("race", "=", "Asian")],
        "provenance_owner_clause": 1,   # M3's evaluate-gated share
        "provenance_requester_clause": 2,
    },
    ("M3", "M1"): {
        "status": "partial",
        "filters": [("genotype", "=", "A/A")],
        "provenance_owner_clause": 3,   # M1's share-to-M3
        "provenance_requester_clause": 0,
    },
    ("M2", "M3"): {  # alliance + data-size conditionals all true
        "status": "full",
        "filters": [],
        "provenance_owner_clause": 4,
        "provenance_requester_clause": 2,
    },
    ("M3", "M2"): {
        "status": "full",
        "filters": [],
        "provenance_owner_clause": 3,   # M2's share-to-M3
        "provenance_requester_clause": 3,   # M3's acquire-from-M2
    },
}

# variant: M1 relocated, fine-select falls through to s3 (White users)
EXPECTED_M1_EUROPE = {
    ("M1", "M2"): {
        "status": "partial",
        "filters": [("race", "=", "White"), ("age", ">", 25)],
    },
}

# variant: genotype columns overlap in >= 10 distinct values, the
# intersection-size gate fails, and the fallback share clause merges in
EXPECTED_LARGE_OVERLAP = {
    ("M1", "M3"): {
        "status": "partial",
        "filters": [("weight", ">", 150), ("race", "=", "Asian")],
        "provenance_owner_clause": 2,   # the fallback share
    },
}


def filter_triples(agreement):
    return [(f.column, f.op, f.value) for f in agreement.selections]
