# tests/test_trec_io.py
import pytest

from src.models.candidate_models import RunEntry
from src.models.corpus_models import Qrels
from src.utils.errors import DuplicateIdError, FormatError
from src.utils.trec_io import read_qrels, read_run, write_qrels, write_run


def _run():
    return {
        "q2": [RunEntry(query_id="q2", doc_id="b", rank=1, score=2.5, tag="fused")],
        "q1": [
            RunEntry(query_id="q1", doc_id="a", rank=1, score=0.75, tag="fused"),
            RunEntry(query_id="q1", doc_id="c", rank=2, score=0.75, tag="fused"),
            RunEntry(query_id="q1", doc_id="b", rank=3, score=-1.0, tag="fused"),
        ],
    }


def test_run_file_layout(tmp_path):
    path = tmp_path / "out" / "fused.run"
    write_run(_run(), path)
    assert path.read_text().splitlines() == [
        "q1 Q0 a 1 0.750000 fused",
        "q1 Q0 c 2 0.750000 fused",
        "q1 Q0 b 3 -1.000000 fused",
        "q2 Q0 b 1 2.500000 fused",
    ]
    assert read_run(path) == _run()


def test_read_run_tolerates_whitespace_and_order(tmp_path):
    path = tmp_path / "messy.run"
    path.write_text("q1\tQ0\tb  2 0.5 sys\n\nq1 Q0   a 1 0.9 sys\r\n")
    run = read_run(path)
    assert [(e.doc_id, e.rank) for e in run["q1"]] == [("a", 1), ("b", 2)]


def test_write_run_rejects_broken_invariants(tmp_path):
    rising = {"q": [RunEntry(query_id="q", doc_id="a", rank=1, score=0.1),
                    RunEntry(query_id="q", doc_id="b", rank=2, score=0.2)]}
    with pytest.raises(ValueError, match="score increases"):
        write_run(rising, tmp_path / "x.run")
    duplicate = {"q": [RunEntry(query_id="q", doc_id="a", rank=1, score=0.2),
                       RunEntry(query_id="q", doc_id="a", rank=2, score=0.1)]}
    with pytest.raises(DuplicateIdError):
        write_run(duplicate, tmp_path / "x.run")
    gap = {"q": [RunEntry(query_id="q", doc_id="a", rank=2, score=0.2)]}
    with pytest.raises(ValueError, match="rank 2"):
        write_run(gap, tmp_path / "x.run")


@pytest.mark.parametrize("line", ["q1 Q0 a 1 0.5", "q1 Q0 a one 0.5 tag", "q1 Q0 a 1 high tag", "q1 Q0 a 0 0.5 tag",
                                  "q1 Q0 z 2 0.5 tag"])
def test_read_run_rejects_malformed_lines(tmp_path, line):
    path = tmp_path / "bad.run"
    path.write_text("q1 Q0 z 1 1.0 tag\n" + line + "\n")
    with pytest.raises(FormatError, match=":2:"):
        read_run(path)


def test_qrels_round_trip(tmp_path):
    qrels = Qrels(judgments={"q1": {"d2": 0, "d1": 3}, "q0": {"d9": 1}})
    path = tmp_path / "qrels.txt"
    write_qrels(qrels, path)
    assert path.read_text() == "q0 0 d9 1\nq1 0 d1 3\nq1 0 d2 0\n"
    assert read_qrels(path) == qrels


@pytest.mark.parametrize("content,error", [
    ("q1 0 d1\n", FormatError),
    ("q1 0 d1 two\n", FormatError),
    ("q1 0 d1 -1\n", FormatError),
    ("q1 0 d1 1\nq1 0 d1 2\n", DuplicateIdError),
])
def test_read_qrels_rejects_bad_input(tmp_path, content, error):
    path = tmp_path / "qrels.txt"
    path.write_text(content)
    with pytest.raises(error):
        read_qrels(path)
