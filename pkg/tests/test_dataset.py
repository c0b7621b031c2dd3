import json

import numpy as np
import pytest
from hypothesis import given, settings, strategies as st

from gridcollage.dataset import (
    CellInfo, CollageSpec, GenPlan, PredictionRecord, SchemaError, collage_info_from_doc,
    collage_info_to_doc, generate_groups, group_of, parse_collage_info, parse_predictions,
    write_collage_info, write_predictions,
)
from gridcollage.grid import is_valid_arrangement

from conftest import permutations


def pool(m):
    return [(f"img_{i:05d}", i % 7) for i in range(m)]


name_st = st.binary(min_size=5, max_size=5).map(lambda b: b.hex() + ".jpeg")


@st.composite
def specs_st(draw):
    n = draw(st.sampled_from([2, 3]))
    perm = draw(permutations(n * n))
    cells = {}
    for j, c in enumerate(perm):
        label = draw(st.text(min_size=1, max_size=12))
        cells[c] = CellInfo(f"src{j}.JPEG", draw(st.integers(0, 999)), label, c)
    return CollageSpec(draw(name_st), cells)


@st.composite
def record_st(draw):
    k = draw(st.sampled_from([4, 9]))
    return PredictionRecord(draw(name_st), draw(permutations(k)),
                            draw(st.lists(st.integers(0, 1), min_size=k, max_size=k)),
                            [draw(st.text(min_size=1, max_size=8)) for _ in range(k)])


class TestGenerate:
    def test_small(self):
        specs = generate_groups(pool(8), GenPlan(4, 2, 5, seed=1))
        assert len(specs) == 10
        assert len({s.collage_name for s in specs}) == 10
        for g in range(2):
            ori, group = group_of(pool(8), specs, GenPlan(4, 2, 5, seed=1), g)
            arrs = [tuple(s.arrangement_for(ori)) for s in group]
            assert all(is_valid_arrangement(a, 4) for a in arrs)
            assert len(set(arrs)) == 5
            assert all(set(s.images()) == set(ori) for s in group)

    def test_deterministic(self, tmp_path):
        plan = GenPlan(9, 20, 10, seed=3)
        write_collage_info(generate_groups(pool(180), plan), tmp_path / "a.json")
        write_collage_info(generate_groups(pool(180), plan), tmp_path / "b.json")
        assert (tmp_path / "a.json").read_bytes() == (tmp_path / "b.json").read_bytes()

    def test_distinct_arrangements_when_possible(self):
        plan = GenPlan(4, 30, 24, seed=0)
        specs = generate_groups(pool(120), plan)
        for g in range(30):
            ori, group = group_of(pool(120), specs, plan, g)
            assert len({tuple(s.arrangement_for(ori)) for s in group}) == 24

    def test_published_count(self):
        plan = GenPlan.published(2)
        assert plan.groups * plan.shuffles == 125_000
        p3 = GenPlan.published(3)
        assert (p3.groups, p3.shuffles) == (11_111, 10)

    def test_insufficient_pool(self):
        with pytest.raises(ValueError):
            generate_groups(pool(7), GenPlan(4, 2, 1))

    def test_labels(self):
        specs = generate_groups([("a", 1, "cat"), ("b", 2, "dog"), ("c", 1, "cat"), ("d", 3, "emu")],
                                GenPlan(4, 1, 1))
        assert sorted(specs[0].labels()) == ["cat", "cat", "dog", "emu"]

    @pytest.mark.parametrize("kw", [dict(k=5, groups=1, shuffles=1), dict(k=4, groups=1, shuffles=0),
                                    dict(k=1, groups=1, shuffles=1)])
    def test_bad_plan(self, kw):
        with pytest.raises(ValueError):
            GenPlan(**kw)


class TestCollageInfo:
    def test_published_fragment(self, fixtures_dir):
        specs = parse_collage_info(fixtures_dir / "collage_info_fragment.txt")
        assert len(specs) == 1
        s = specs[0]
        assert s.collage_name == "a72bca2a3e.jpeg" and s.k == 4
        assert s.class_ids() == [866, 480, 842, 98]
        assert s.cells[0] == CellInfo("ILSVRC2012_val_00024101.JPEG", 866, "tractor", 0)
        assert s.labels()[2] == "swim trunks / shorts"

    @given(st.lists(specs_st(), min_size=1, max_size=8, unique_by=lambda s: s.collage_name))
    @settings(max_examples=50)
    def test_round_trip(self, tmp_path_factory, specs):
        path = tmp_path_factory.mktemp("ci") / "collage_info.json"
        write_collage_info(specs, path)
        assert parse_collage_info(path) == specs

    def test_round_trip_hundred(self, tmp_path):
        specs = generate_groups(pool(100), GenPlan(4, 25, 4, seed=9))
        write_collage_info(specs, tmp_path / "c.json")
        assert parse_collage_info(tmp_path / "c.json") == specs

    def test_key_out_of_range(self):
        doc = collage_info_to_doc(generate_groups(pool(4), GenPlan(4, 1, 1)))
        cells = next(iter(doc.values()))
        cells["4"] = cells.pop("3")
        cells["4"]["index"] = 4
        with pytest.raises(SchemaError):
            collage_info_from_doc(doc)

    def test_index_mismatch(self):
        doc = collage_info_to_doc(generate_groups(pool(4), GenPlan(4, 1, 1)))
        next(iter(doc.values()))["1"]["index"] = 2
        with pytest.raises(SchemaError, match="index"):
            collage_info_from_doc(doc)

    def test_duplicate_key(self, tmp_path):
        p = tmp_path / "d.json"
        p.write_text('{"a72bca2a3e.jpeg": {"0": {}, "0": {}}}')
        with pytest.raises(SchemaError, match="duplicate"):
            parse_collage_info(p)

    def test_malformed(self, tmp_path):
        p = tmp_path / "m.json"
        p.write_text("{not json")
        with pytest.raises(SchemaError):
            parse_collage_info(p)

    def test_bad_name(self):
        with pytest.raises(SchemaError):
            CollageSpec("A72BCA2A3E.jpeg", {0: CellInfo("x", 0, "x", 0)})

    def test_rearranged(self):
        spec = generate_groups(pool(9), GenPlan(9, 1, 1))[0]
        perm = np.random.default_rng(0).permutation(9)
        moved = spec.rearranged(perm)
        for j in range(9):
            assert moved.cells[perm[j]].image == spec.cells[j].image


class TestPredictions:
    def test_published_fragment(self, fixtures_dir):
        recs = {r.collage_name: r for r in parse_predictions(fixtures_dir / "prediction_fragment.txt")}
        r = recs["0b73a3623d.jpeg"]
        assert r.ord == (1, 2, 0, 3) and r.pred == (0, 0, 1, 1)
        assert r.ori[0] == "n07697313_12937.JPEG"
        assert recs["eb46c53c56.jpeg"].ord == (3, 2, 1, 0)

    @given(st.lists(record_st(), min_size=1, max_size=10, unique_by=lambda r: r.collage_name))
    @settings(max_examples=50)
    def test_round_trip(self, tmp_path_factory, records):
        path = tmp_path_factory.mktemp("pr") / "pred.json"
        write_predictions(records, path)
        assert parse_predictions(path) == records

    def test_round_trip_thousand(self, tmp_path, rng):
        recs = [PredictionRecord(rng.bytes(5).hex() + ".jpeg", rng.permutation(9),
                                 rng.integers(0, 2, 9).tolist(), [f"i{j}" for j in range(9)])
                for _ in range(1000)]
        recs = list({r.collage_name: r for r in recs}.values())
        write_predictions(recs, tmp_path / "p.json")
        assert parse_predictions(tmp_path / "p.json") == recs

    def test_pred_two_rejected(self):
        with pytest.raises(SchemaError):
            PredictionRecord("0b73a3623d.jpeg", [0, 1, 2, 3], [0, 2, 1, 1], list("abcd"))

    def test_arity_mismatch(self):
        with pytest.raises(SchemaError):
            PredictionRecord("0b73a3623d.jpeg", [0, 1, 2, 3], [0, 1, 1], list("abcd"))

    def test_ord_not_permutation(self):
        with pytest.raises(SchemaError):
            PredictionRecord("0b73a3623d.jpeg", [0, 1, 1, 3], [0, 1, 1, 0], list("abcd"))

    def test_document_is_json(self, tmp_path):
        rec = PredictionRecord("0b73a3623d.jpeg", [1, 2, 0, 3], [0, 0, 1, 1], list("abcd"))
        write_predictions([rec], tmp_path / "p.json")
        doc = json.loads((tmp_path / "p.json").read_text())
        assert doc == {"0b73a3623d.jpeg": {"ord": [1, 2, 0, 3], "pred": [0, 0, 1, 1], "ori": list("abcd")}}

    def test_arrangement_matches_spec(self):
        plan = GenPlan(4, 1, 3, seed=2)
        specs = generate_groups(pool(4), plan)
        ori, group = group_of(pool(4), specs, plan, 0)
        for s in group:
            arr = s.arrangement_for(ori)
            assert [s.cells[arr[j]].image for j in range(4)] == ori
