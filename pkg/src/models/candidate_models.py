# src/models/candidate_models.py
from typing import Dict, List, Optional

from pydantic import BaseModel, ConfigDict, Field, model_validator


class Candidate(BaseModel):
    """A scored passage for one query, with the provenance of every stage it went through."""
    model_config = ConfigDict(frozen=True)

    passage_id: str
    retrieval_score: float
    retrieval_rank: int = Field(ge=1)
    source_tag: str
    ranking_score: Optional[float] = None
    hlatr_score: Optional[float] = None


class CandidateList(BaseModel):
    """
    Candidates of one query in stage order.

    Retrieval ranks always form 1..n (they are the stage-1 positions), even after
    a later stage has reordered the list.
    """
    model_config = ConfigDict(frozen=True)

    query_id: str
    candidates: List[Candidate] = Field(default_factory=list)

    @model_validator(mode="after")
    def _check_candidates(self) -> "CandidateList":
        ids = [c.passage_id for c in self.candidates]
        if len(set(ids)) != len(ids):
            raise ValueError(f"duplicate passage ids in candidate list of query '{self.query_id}'")
        ranks = sorted(c.retrieval_rank for c in self.candidates)
        if ranks != list(range(1, len(ranks) + 1)):
            raise ValueError(f"retrieval ranks of query '{self.query_id}' are not consecutive from 1")
        return self

    def __len__(self) -> int:
        return len(self.candidates)

    @property
    def passage_ids(self) -> List[str]:
        return [c.passage_id for c in self.candidates]


class RunEntry(BaseModel):
    """One line of a TREC run file."""
    model_config = ConfigDict(frozen=True)

    query_id: str
    doc_id: str
    rank: int = Field(ge=1)
    score: float
    tag: str = "run"


# query_id -> entries in rank order
Run = Dict[str, List[RunEntry]]

# query_id -> passage_id -> score
ScoreTable = Dict[str, Dict[str, float]]


def rank_key(passage_id: str, score: float):
    """Sort key of the global tie rule: score descending, then id ascending."""
    return (-score, passage_id)


def run_from_candidates(lists: Dict[str, CandidateList], tag: str, field: str = "retrieval_score") -> Run:
    """
    Turns stage outputs into run entries, ranked in list order.

    Candidates lacking the requested score (the tail a stage did not rescore)
    receive scores strictly below the last scored candidate so the run stays
    monotone.
    """
    run: Run = {}
    for query_id in sorted(lists):
        entries = []
        last_score: Optional[float] = None
        for position, candidate in enumerate(lists[query_id].candidates, start=1):
            score = getattr(candidate, field)
            if score is None:
                score = (last_score if last_score is not None else 0.0) - 1.0
            elif last_score is not None and score > last_score:
                score = last_score
            last_score = score
            entries.append(RunEntry(query_id=query_id, doc_id=candidate.passage_id,
                                    rank=position, score=score, tag=tag))
        run[query_id] = entries
    return run


def candidates_from_run(run: Run, source_tag: str) -> Dict[str, CandidateList]:
    """Reads a retrieval-stage run back into candidate lists (rank = retrieval rank)."""
    lists = {}
    for query_id, entries in run.items():
        ordered = sorted(entries, key=lambda e: e.rank)
        lists[query_id] = CandidateList(
            query_id=query_id,
            candidates=[
                Candidate(passage_id=e.doc_id, retrieval_score=e.score,
                          retrieval_rank=position, source_tag=source_tag)
                for position, e in enumerate(ordered, start=1)
            ],
        )
    return lists
