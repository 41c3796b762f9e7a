from __future__ import annotations

import random

import pytest

from sportprov.graph import (
    Connection,
    Construct,
    CycleIntroduced,
    DuplicateId,
    EdgeKind,
    NodeKind,
    ProvEdge,
    ProvGraph,
    ProvNode,
    Relation,
    TopLevel,
)
from sportprov.interop import (
    InvalidGraph,
    SprovSyntaxError,
    UnknownRelation,
    graph_from_json,
    graph_to_json,
    parse,
    serialize,
    strip_specialisation,
)
from support import build_goal_chain, random_valid_graph


def test_single_agent_record_shape():
    g = ProvGraph()
    g.add_node(ProvNode("P7", NodeKind.of(Construct.PLAYER), label="P7"))
    text = serialize(g)
    assert 'agent(sport:P7, [prov:label="P7", prov:type="prov:Person", sport:type="Player", sport:seq=1])' in text
    assert parse(text) == g


def test_empty_graph_document():
    text = serialize(ProvGraph())
    lines = [line.strip() for line in text.strip().splitlines()]
    assert lines[0] == "document"
    assert lines[-1] == "endDocument"
    assert all(line.startswith("prefix") for line in lines[1:-1])
    assert parse(text) == ProvGraph()


def test_statement_count_matches_nodes_plus_edges():
    g = build_goal_chain().graph
    text = serialize(g)
    statements = [
        line
        for line in text.splitlines()
        if line.strip()
        and not line.strip().startswith(("document", "endDocument", "prefix", "//"))
    ]
    assert len(statements) == len(g.nodes) + len(g.edges)


def test_round_trip_fixture():
    g = build_goal_chain().graph
    assert parse(serialize(g)) == g


def test_round_trip_random_graphs():
    rng = random.Random(4242)
    for _ in range(80):
        g = random_valid_graph(rng, max_nodes=40)
        text = serialize(g)
        back = parse(text)
        assert back == g
        assert serialize(back) == text


def test_serialize_deterministic():
    g1 = build_goal_chain().graph
    g2 = build_goal_chain().graph
    assert serialize(g1) == serialize(g2)


def test_serialize_rejects_invalid_graph():
    g = ProvGraph()
    g.add_node(ProvNode("e", NodeKind.of(Construct.DATASET)))
    g.add_node(ProvNode("a1", NodeKind.of(Construct.COMPUTATION)))
    g.add_node(ProvNode("a2", NodeKind.of(Construct.COMPUTATION)))
    g.add_edge(ProvEdge("e", "a1", EdgeKind(Relation.WAS_GENERATED_BY)))
    g._add_edge_unchecked(ProvEdge("e", "a2", EdgeKind(Relation.WAS_GENERATED_BY)))
    with pytest.raises(InvalidGraph):
        serialize(g)


def test_undeclared_prefix_rejected():
    text = (
        "document\n"
        "  prefix prov <http://www.w3.org/ns/prov#>\n"
        "  prefix sport <https://example.org/ns/sport#>\n"
        '  entity(vt:e15, [sport:seq=1])\n'
        "endDocument\n"
    )
    with pytest.raises(SprovSyntaxError) as info:
        parse(text)
    assert info.value.line == 4


def test_hand_written_minimal_document():
    text = (
        "document\n"
        "  // a dataset produced by one computation\n"
        "  prefix prov <http://www.w3.org/ns/prov#>\n"
        "  prefix sport <https://example.org/ns/sport#>\n"
        '  entity(sport:out, [sport:type="Dataset", sport:seq=1, sport:rows=3])\n'
        '  activity(sport:calc, [sport:type="Computation", sport:seq=2])\n'
        "  wasGeneratedBy(sport:out, sport:calc, [sport:connection=\"data\"])\n"
        "endDocument\n"
    )
    g = parse(text)
    assert set(g.nodes) == {"out", "calc"}
    assert len(g.edges) == 1
    assert g.edges[0].kind.relation is Relation.WAS_GENERATED_BY
    assert g.edges[0].kind.connection is Connection.DATA
    assert g.nodes["out"].attrs == {"rows": 3}
    assert g.validate() == []


def test_unknown_relation_statement():
    text = (
        "document\n"
        "  prefix prov <http://www.w3.org/ns/prov#>\n"
        "  prefix sport <https://example.org/ns/sport#>\n"
        "  wasAttributedTo(sport:a, sport:b)\n"
        "endDocument\n"
    )
    with pytest.raises(UnknownRelation):
        parse(text)


def test_parse_duplicate_id():
    text = (
        "document\n"
        "  prefix prov <http://www.w3.org/ns/prov#>\n"
        "  prefix sport <https://example.org/ns/sport#>\n"
        '  entity(sport:x, [sport:seq=1])\n'
        '  entity(sport:x, [sport:seq=2])\n'
        "endDocument\n"
    )
    with pytest.raises(DuplicateId):
        parse(text)


def test_parse_rejects_cyclic_document():
    text = (
        "document\n"
        "  prefix prov <http://www.w3.org/ns/prov#>\n"
        "  prefix sport <https://example.org/ns/sport#>\n"
        '  entity(sport:e, [sport:seq=1])\n'
        '  activity(sport:a, [sport:seq=2])\n'
        "  wasGeneratedBy(sport:e, sport:a)\n"
        "  used(sport:a, sport:e)\n"
        "endDocument\n"
    )
    with pytest.raises(CycleIntroduced):
        parse(text)


def test_parse_reports_position():
    text = "document\n  entity(sport:x [oops\nendDocument\n"
    with pytest.raises(SprovSyntaxError) as info:
        parse(text)
    assert info.value.line == 2
    assert info.value.col > 1


def test_missing_envelope():
    with pytest.raises(SprovSyntaxError):
        parse('entity(sport:x, [sport:seq=1])\n')
    with pytest.raises(SprovSyntaxError):
        parse("document\n")


def test_comments_and_blank_lines_ignored():
    g = build_goal_chain().graph
    text = serialize(g)
    noisy = text.replace(
        "document", "document\n// comment line\n\n", 1
    )
    assert parse(noisy) == g


def test_quoted_identifiers_round_trip():
    g = ProvGraph()
    g.add_node(
        ProvNode("state:e1 weird", NodeKind.of(Construct.PHYSICAL_GAME_STATE), label="s")
    )
    g.add_node(ProvNode("7even", NodeKind(TopLevel.AGENT), label="le agent"))
    text = serialize(g)
    assert 'sport:"state:e1 weird"' in text
    back = parse(text)
    assert back == g


def test_strip_specialisation_projects_and_preserves_topology():
    g = build_goal_chain().graph
    stripped = strip_specialisation(g)
    assert len(stripped.nodes) == len(g.nodes)
    assert len(stripped.edges) == len(g.edges)
    assert all(n.kind.construct is None for n in stripped.nodes.values())
    assert all(e.kind.connection is None for e in stripped.edges)
    player = stripped.nodes["P7"]
    assert player.kind.top_level is TopLevel.AGENT


def test_strip_specialisation_idempotent():
    g = build_goal_chain().graph
    once = strip_specialisation(g)
    twice = strip_specialisation(once)
    assert once == twice
    # the stripped view is still a serialisable, valid document
    assert parse(serialize(once)) == once


def test_foreign_namespace_attrs_preserved():
    g = ProvGraph()
    g.namespaces["vt"] = "http://www.vistrails.org/registry.xsd"
    g.add_node(
        ProvNode(
            "e15",
            NodeKind(TopLevel.ENTITY),
            label="str_expr",
            attrs={"vt:id": 15, "prov:type": "vt:data"},
        )
    )
    text = serialize(g)
    assert "vt:id=15" in text
    back = parse(text)
    assert back == g


def test_json_graph_round_trip():
    g = build_goal_chain().graph
    data = graph_to_json(g)
    back = graph_from_json(data)
    assert back == g


def test_parser_survives_mutated_documents():
    """Random corruption must yield a typed error, never a crash."""
    from sportprov.graph import ProvError

    rng = random.Random(1337)
    base = serialize(build_goal_chain().graph)
    junk = ")(][=,<>\"\\'x0¢\n"
    for _ in range(300):
        lines = base.splitlines()
        for _ in range(rng.randint(1, 4)):
            index = rng.randrange(len(lines))
            line = lines[index]
            mutation = rng.random()
            if mutation < 0.4 and line:
                pos = rng.randrange(len(line))
                lines[index] = line[:pos] + rng.choice(junk) + line[pos + 1 :]
            elif mutation < 0.7:
                del lines[index]
            else:
                lines.insert(index, rng.choice(junk) * rng.randint(1, 5))
        text = "\n".join(lines)
        try:
            graph = parse(text)
        except ProvError:
            continue  # typed rejection is the expected outcome
        assert graph.validate() == []  # mutation happened to stay well-formed
