# tests/test_id_table.py
import numpy as np
import pytest

from src.models.id_table import IdTable
from src.utils.errors import DuplicateIdError


def test_ordinals_follow_input_order():
    table = IdTable(["p3", "p1", "p2"])
    assert table.ordinal("p1") == 1
    assert table.id(2) == "p2"
    assert table.get_ordinal("zz") is None
    assert "p3" in table and len(table) == 3


def test_duplicate_ids_are_rejected():
    with pytest.raises(DuplicateIdError):
        IdTable(["a", "b", "a"])


def test_top_k_breaks_ties_by_id_not_ordinal():
    table = IdTable(["c", "a", "b", "d"])
    best = table.top_k(np.array([0, 1, 2, 3]), np.array([1.0, 1.0, 2.0, 1.0]), 3)
    assert [(table.id(o), s) for o, s in best] == [("b", 2.0), ("a", 1.0), ("c", 1.0)]


def test_candidate_list_has_consecutive_ranks():
    table = IdTable(["x", "y", "z"])
    candidates = table.to_candidate_list("q", np.array([2, 0]), np.array([0.1, 0.4]), 5, "bm25")
    assert candidates.passage_ids == ["x", "z"]
    assert [c.retrieval_rank for c in candidates.candidates] == [1, 2]
    assert table.top_k(np.array([], dtype=np.int64), np.array([]), 3) == []
    with pytest.raises(ValueError):
        table.top_k(np.array([0]), np.array([1.0]), 0)
