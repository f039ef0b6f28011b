from __future__ import annotations

import json
import random

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from macr.errors import RecordError, ValidationError
from macr.treemodel import (
    TRUNCATION_MARKER,
    ConversationTree,
    Dataset,
    RiskLabelSet,
    dump_dataset,
    kfold_split,
    parse_dataset,
    render_tree,
    tree_from_record,
)

from conftest import DATA, check_golden


def write_records(path, records):
    path.write_text("".join(json.dumps(r) + "\n" for r in records), encoding="utf-8")
    return path


def random_record(rng: random.Random, i: int, labels) -> dict:
    comments = []
    for j in range(rng.randint(0, 8)):
        parent = rng.choice([None] + [c["id"] for c in comments])
        item = {"id": f"r{i}-c{j}", "parent_id": parent, "text": f"reply {j} to {parent or 'post'}\nsecond line {rng.random():.3f}"}
        if rng.random() < 0.5:
            item["author"] = f"u{rng.randint(1, 5)}"
        comments.append(item)
    rec = {"id": f"r{i}", "post": f"post number {i} ünïcode", "comments": comments}
    if rng.random() < 0.8:
        rec["label"] = rng.choice(labels.labels)
    return rec


# ---------------------------------------------------------------- label set


def test_label_set_defaults(labels):
    assert labels.labels == ("L0", "L1", "L2", "L3")
    assert labels.count == 4


@pytest.mark.parametrize("bad", [("L0",), ("a", "a"), ("a", "")])
def test_label_set_rejects(bad):
    with pytest.raises(ValidationError):
        RiskLabelSet(bad)


# ---------------------------------------------------------------- parsing


def test_flat_comments_node_count(tmp_path, labels):
    path = write_records(tmp_path / "d.jsonl", [{
        "id": "t1", "post": "hello", "comments": [
            {"id": "a", "parent_id": None, "text": "one"},
            {"id": "b", "parent_id": None, "text": "two"},
        ],
    }])
    ds = parse_dataset(path, labels)
    assert len(ds) == 1
    assert ds.trees[0].node_count == 3


def test_self_parent_is_cycle(tmp_path, labels):
    path = write_records(tmp_path / "d.jsonl", [{
        "id": "t1", "post": "hello", "comments": [{"id": "a", "parent_id": "a", "text": "x"}],
    }])
    with pytest.raises(RecordError, match="cycle") as err:
        parse_dataset(path, labels)
    assert err.value.line == 1


def test_two_node_cycle(labels):
    rec = {"id": "t", "post": "p", "comments": [
        {"id": "a", "parent_id": "b", "text": "x"},
        {"id": "b", "parent_id": "a", "text": "y"},
        {"id": "c", "parent_id": None, "text": "z"},
    ]}
    with pytest.raises(RecordError, match="cycle"):
        tree_from_record(rec, labels, 4)


def test_malformed_record_names_line_and_field(tmp_path, labels):
    path = write_records(tmp_path / "d.jsonl", [
        {"id": "t1", "post": "fine"},
        {"id": "t2", "post": 7},
    ])
    with pytest.raises(RecordError) as err:
        parse_dataset(path, labels)
    assert err.value.line == 2 and err.value.field == "post"


def test_invalid_json_line(tmp_path, labels):
    path = tmp_path / "d.jsonl"
    path.write_text('{"id": "t1", "post": "ok"}\n{not json\n')
    with pytest.raises(RecordError, match="line 2"):
        parse_dataset(path, labels)


def test_duplicate_tree_id(tmp_path, labels):
    path = write_records(tmp_path / "d.jsonl", [{"id": "t1", "post": "a"}, {"id": "t1", "post": "b"}])
    with pytest.raises(RecordError, match="duplicate tree id"):
        parse_dataset(path, labels)


def test_unknown_label(tmp_path, labels):
    path = write_records(tmp_path / "d.jsonl", [{"id": "t1", "post": "a", "label": "severe"}])
    with pytest.raises(RecordError, match="unknown label"):
        parse_dataset(path, labels)


def test_unknown_parent(labels):
    rec = {"id": "t", "post": "p", "comments": [{"id": "a", "parent_id": "zz", "text": "x"}]}
    with pytest.raises(RecordError, match="unknown parent"):
        tree_from_record(rec, labels, 1)


def test_children_keep_file_order_and_depth(labels):
    rec = {"id": "t", "post": "p", "comments": [
        {"id": "b", "parent_id": "a", "text": "deep"},
        {"id": "a", "parent_id": None, "text": "top"},
        {"id": "c", "parent_id": "a", "text": "deep2"},
    ]}
    tree = tree_from_record(rec, labels)
    (a,) = tree.root_comments
    assert [c.id for c in a.children] == ["b", "c"]
    assert a.depth == 1 and all(c.depth == 2 for c in a.children)


def test_round_trip_ten_records(tmp_path, labels):
    rng = random.Random(11)
    records = [random_record(rng, i, labels) for i in range(10)]
    first = parse_dataset(write_records(tmp_path / "a.jsonl", records), labels, name="x")
    dump_dataset(first, tmp_path / "b.jsonl")
    second = parse_dataset(tmp_path / "b.jsonl", labels, name="x")
    assert first == second
    assert [t.node_count for t in first] == [t.node_count for t in second]
    dump_dataset(second, tmp_path / "c.jsonl")
    assert (tmp_path / "b.jsonl").read_bytes() == (tmp_path / "c.jsonl").read_bytes()


def test_traversal_visits_every_node_once(fixture12):
    for tree in fixture12:
        ids = [node.id for node, _ in tree.iter_comments()]
        assert len(ids) == len(set(ids)) == tree.node_count - 1


# ---------------------------------------------------------------- rendering


def chain_tree(depth: int) -> ConversationTree:
    rec = {"id": "chain", "post": "root post", "comments": [
        {"id": f"c{d}", "parent_id": f"c{d - 1}" if d > 1 else None, "text": f"level {d}"} for d in range(1, depth + 1)
    ]}
    return tree_from_record(rec, RiskLabelSet())


def test_post_only_rendering():
    tree = ConversationTree("p", "just a post")
    assert render_tree(tree) == "[POST] just a post\n"


def test_depth_limit_drops_deep_nodes_and_marks():
    text = render_tree(chain_tree(5), max_depth=2, max_nodes=60)
    assert "level 2" in text and "level 3" not in text
    assert TRUNCATION_MARKER in text


def test_no_marker_when_everything_fits():
    assert TRUNCATION_MARKER not in render_tree(chain_tree(3), 6, 60)


def test_breadth_first_admission_keeps_early_top_level_replies(labels):
    rec = {"id": "t", "post": "p", "comments": [
        {"id": "a", "parent_id": None, "text": "first top"},
        {"id": "a1", "parent_id": "a", "text": "nested under first"},
        {"id": "b", "parent_id": None, "text": "second top"},
    ]}
    text = render_tree(tree_from_record(rec, labels), max_depth=6, max_nodes=3)
    assert "first top" in text and "second top" in text
    assert "nested under first" not in text
    assert text.endswith(TRUNCATION_MARKER + "\n")


def test_render_is_deterministic(fixture12):
    for tree in fixture12:
        assert render_tree(tree) == render_tree(tree)


def test_golden_rendering(fixture12):
    tree = fixture12.get("t11")
    check_golden(DATA / "golden" / "render_t11.txt", render_tree(tree, max_depth=6, max_nodes=60))
    check_golden(DATA / "golden" / "render_t11_limited.txt", render_tree(tree, max_depth=2, max_nodes=4))


@st.composite
def trees(draw):
    n = draw(st.integers(0, 12))
    comments = []
    for j in range(n):
        parent = draw(st.sampled_from([None] + [c["id"] for c in comments]))
        text = draw(st.text(alphabet="ab \n", max_size=6))
        author = draw(st.sampled_from(["", "u1"]))
        comments.append({"id": f"c{j}", "parent_id": parent, "text": text, "author": author})
    return tree_from_record({"id": "h", "post": "post", "comments": comments}, RiskLabelSet())


@settings(max_examples=200, deadline=None)
@given(trees(), st.integers(1, 4))
def test_render_length_monotone_in_max_nodes(tree, max_depth):
    lengths = [len(render_tree(tree, max_depth, m)) for m in range(1, tree.node_count + 2)]
    assert lengths == sorted(lengths)


# ---------------------------------------------------------------- folds


def labeled_dataset(per_label: int, labels=RiskLabelSet()) -> Dataset:
    trees = [
        ConversationTree(f"t{lab}{i}", f"post {lab} {i}", gold_label=lab)
        for lab in range(len(labels)) for i in range(per_label)
    ]
    return Dataset(trees, labels, "synthetic")


def test_ten_trees_five_folds_of_two():
    ds = Dataset([ConversationTree(f"t{i}", "p", gold_label=i % 4) for i in range(10)])
    folds = kfold_split(ds, 5, seed=0)
    assert [len(test) for _, test in folds] == [2] * 5


def test_same_seed_same_folds():
    ds = labeled_dataset(5)
    a = [[t.id for t in test] for _, test in kfold_split(ds, 5, 3)]
    b = [[t.id for t in test] for _, test in kfold_split(ds, 5, 3)]
    assert a == b


def test_stratified_one_per_label_per_fold():
    ds = labeled_dataset(5)
    folds = kfold_split(ds, 5, seed=7)
    for _, test in folds:
        assert sorted(t.gold_label for t in test) == [0, 1, 2, 3]


@settings(max_examples=50, deadline=None)
@given(st.integers(2, 6), st.integers(0, 10_000), st.lists(st.integers(0, 3), min_size=6, max_size=30))
def test_folds_partition(k, seed, golds):
    ds = Dataset([ConversationTree(f"t{i}", "p", gold_label=g) for i, g in enumerate(golds)])
    folds = kfold_split(ds, k, seed)
    tests = [{t.id for t in test} for _, test in folds]
    assert set().union(*tests) == {t.id for t in ds}
    assert sum(len(s) for s in tests) == len(ds)
    sizes = [len(s) for s in tests]
    assert max(sizes) - min(sizes) <= 1
    for (train, test) in folds:
        assert not {t.id for t in train} & {t.id for t in test}
        assert len(train) + len(test) == len(ds)


def test_unlabeled_tree_rejected():
    ds = Dataset([ConversationTree("a", "p", gold_label=0), ConversationTree("b", "p")])
    with pytest.raises(ValidationError, match="unlabeled"):
        kfold_split(ds, 2, 0)
