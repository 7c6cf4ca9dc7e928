# src/utils/trec_io.py
import json
import logging
from pathlib import Path
from typing import Any, Dict, Iterator, List, Tuple, Union

from ..models.candidate_models import Run, RunEntry, ScoreTable
from ..models.corpus_models import Qrels
from .errors import DuplicateIdError, FormatError

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


def iter_lines(path: PathLike) -> Iterator[Tuple[int, str]]:
    """Yields (1-based line number, stripped line) for every non-blank line."""
    with open(path, 'r', encoding='utf-8') as f:
        for line_number, line in enumerate(f, start=1):
            stripped = line.rstrip('\n').rstrip('\r')
            if stripped.strip():
                yield line_number, stripped


def iter_jsonl(path: PathLike) -> Iterator[Tuple[int, Dict[str, Any]]]:
    for line_number, line in iter_lines(path):
        try:
            record = json.loads(line)
        except json.JSONDecodeError as e:
            raise FormatError(path, line_number, f"invalid JSON: {e.msg}")
        if not isinstance(record, dict):
            raise FormatError(path, line_number, "expected a JSON object")
        yield line_number, record


def validate_run(run: Run) -> None:
    """Checks the run invariants: consecutive ranks, unique docs, non-increasing scores."""
    for query_id, entries in run.items():
        seen = set()
        previous_score = None
        for position, entry in enumerate(entries, start=1):
            if entry.query_id != query_id:
                raise ValueError(f"entry for query '{entry.query_id}' filed under '{query_id}'")
            if entry.rank != position:
                raise ValueError(f"query '{query_id}': rank {entry.rank} at position {position}")
            if entry.doc_id in seen:
                raise DuplicateIdError("doc_id", f"{query_id}/{entry.doc_id}")
            seen.add(entry.doc_id)
            if previous_score is not None and entry.score > previous_score:
                raise ValueError(
                    f"query '{query_id}': score increases at rank {entry.rank} "
                    f"({entry.score} > {previous_score})"
                )
            previous_score = entry.score


def write_run(run: Run, path: PathLike) -> None:
    """Writes a six-column TREC run: `query_id Q0 doc_id rank score tag`."""
    validate_run(run)
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for query_id in sorted(run):
            for entry in run[query_id]:
                f.write(f"{query_id} Q0 {entry.doc_id} {entry.rank} {entry.score:.6f} {entry.tag}\n")
    logger.info(f"Wrote run with {len(run)} queries to {path}")


def read_run(path: PathLike) -> Run:
    """Reads a TREC run; any whitespace separates columns and entries are ordered by rank."""
    run: Dict[str, List[RunEntry]] = {}
    seen: Dict[Tuple[str, str], int] = {}
    for line_number, line in iter_lines(path):
        parts = line.split()
        if len(parts) != 6:
            raise FormatError(path, line_number, f"expected 6 columns, found {len(parts)}")
        query_id, _, doc_id, rank, score, tag = parts
        try:
            entry = RunEntry(query_id=query_id, doc_id=doc_id, rank=int(rank), score=float(score), tag=tag)
        except ValueError as e:
            raise FormatError(path, line_number, f"bad rank or score: {e}")
        if (query_id, doc_id) in seen:
            raise FormatError(path, line_number,
                              f"document '{doc_id}' already listed for query '{query_id}' on line {seen[query_id, doc_id]}")
        seen[query_id, doc_id] = line_number
        run.setdefault(query_id, []).append(entry)
    for entries in run.values():
        entries.sort(key=lambda e: e.rank)
    return run


def read_qrels(path: PathLike) -> Qrels:
    """Reads TREC qrels: `query_id 0 doc_id grade`."""
    judgments: Dict[str, Dict[str, int]] = {}
    for line_number, line in iter_lines(path):
        parts = line.split()
        if len(parts) != 4:
            raise FormatError(path, line_number, f"expected 4 columns, found {len(parts)}")
        query_id, _, doc_id, grade_text = parts
        try:
            grade = int(grade_text)
        except ValueError:
            raise FormatError(path, line_number, f"grade '{grade_text}' is not an integer")
        if grade < 0:
            raise FormatError(path, line_number, f"grade {grade} is negative")
        docs = judgments.setdefault(query_id, {})
        if doc_id in docs:
            raise DuplicateIdError("judgment", f"{query_id}/{doc_id}", str(path))
        docs[doc_id] = grade
    return Qrels(judgments=judgments)


def write_qrels(qrels: Qrels, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for query_id in qrels.query_ids():
            for doc_id, grade in sorted(qrels.for_query(query_id).items()):
                f.write(f"{query_id} 0 {doc_id} {grade}\n")


def read_score_file(path: PathLike) -> Tuple[ScoreTable, int]:
    """
    Reads per-(query, passage) scores from a TREC run or a `query_id<TAB>passage_id<TAB>score` TSV.

    Ranks of TREC input are ignored. A repeated pair keeps its last score; the
    number of repeats is returned alongside the table.
    """
    table: ScoreTable = {}
    duplicates = 0
    for line_number, line in iter_lines(path):
        parts = line.split('\t') if '\t' in line else line.split()
        parts = [p.strip() for p in parts]
        if len(parts) == 3:
            query_id, passage_id, score_text = parts
        elif len(parts) == 6:
            query_id, _, passage_id, _, score_text, _ = parts
        else:
            raise FormatError(path, line_number, f"expected 3 or 6 columns, found {len(parts)}")
        try:
            score = float(score_text)
        except ValueError:
            raise FormatError(path, line_number, f"score '{score_text}' is not a number")
        scores = table.setdefault(query_id, {})
        if passage_id in scores:
            duplicates += 1
        scores[passage_id] = score
    if duplicates:
        logger.warning(f"{duplicates} duplicate (query, passage) pairs in {path}; last score kept.")
    return table, duplicates


def write_score_file(table: ScoreTable, path: PathLike) -> None:
    Path(path).parent.mkdir(parents=True, exist_ok=True)
    with open(path, 'w', encoding='utf-8') as f:
        for query_id in sorted(table):
            for passage_id, score in sorted(table[query_id].items()):
                f.write(f"{query_id}\t{passage_id}\t{score!r}\n")
