# src/models/corpus_models.py
from typing import Dict, Iterator, List, Optional, Sequence, Tuple

from pydantic import BaseModel, ConfigDict, Field, model_validator

from ..utils.errors import DuplicateIdError

PASSAGE_ID_SEPARATOR = "#"


class Document(BaseModel):
    """A raw document; split into passages before retrieval in the document task."""
    model_config = ConfigDict(frozen=True)

    doc_id: str = Field(min_length=1)
    text: str = ""
    title: Optional[str] = None


class TokenSpan(BaseModel):
    model_config = ConfigDict(frozen=True)

    start: int = Field(ge=0)
    end: int

    @model_validator(mode="after")
    def _check_order(self) -> "TokenSpan":
        if self.start >= self.end:
            raise ValueError(f"token span start {self.start} must be < end {self.end}")
        return self


class Passage(BaseModel):
    """
    The unit every retriever indexes.

    Passages split out of a document carry the id `<doc_id>#<window_index>` and
    the token span they cover; native passages are their own parent.
    """
    model_config = ConfigDict(frozen=True)

    passage_id: str = Field(min_length=1)
    parent_doc_id: str = Field(min_length=1)
    text: str = ""
    token_span: Optional[TokenSpan] = None


class Query(BaseModel):
    model_config = ConfigDict(frozen=True)

    query_id: str = Field(min_length=1)
    text: str = ""


class Qrels(BaseModel):
    """Graded relevance judgments: query_id -> doc_id -> grade."""
    model_config = ConfigDict(frozen=True)

    judgments: Dict[str, Dict[str, int]] = Field(default_factory=dict)

    @model_validator(mode="after")
    def _check_grades(self) -> "Qrels":
        for query_id, docs in self.judgments.items():
            for doc_id, grade in docs.items():
                if grade < 0:
                    raise ValueError(f"negative grade {grade} for ({query_id}, {doc_id})")
        return self

    def grade(self, query_id: str, doc_id: str) -> Optional[int]:
        return self.judgments.get(query_id, {}).get(doc_id)

    def query_ids(self) -> List[str]:
        return sorted(self.judgments)

    def for_query(self, query_id: str) -> Dict[str, int]:
        return self.judgments.get(query_id, {})

    def relevant(self, query_id: str, rel_threshold: int) -> List[str]:
        return sorted(d for d, g in self.for_query(query_id).items() if g >= rel_threshold)

    def passage_grade(self, query_id: str, passage_id: str) -> Optional[int]:
        """Grade of a passage, falling back to its parent document when the passage is unjudged."""
        grade = self.grade(query_id, passage_id)
        if grade is None and PASSAGE_ID_SEPARATOR in passage_id:
            grade = self.grade(query_id, passage_id.rpartition(PASSAGE_ID_SEPARATOR)[0])
        return grade

    def __len__(self) -> int:
        return sum(len(docs) for docs in self.judgments.values())


class Corpus:
    """
    Immutable, ordered collection of passages (and the documents they came from).

    The passage order defines the ordinals used by every index built over the
    corpus. Lookups are read-only, so a corpus can be shared across threads.
    """

    def __init__(self, passages: Sequence[Passage], documents: Sequence[Document] = ()):
        self._passages: Tuple[Passage, ...] = tuple(passages)
        self._documents: Tuple[Document, ...] = tuple(documents)
        self._by_id: Dict[str, Passage] = {}
        for passage in self._passages:
            if passage.passage_id in self._by_id:
                raise DuplicateIdError("passage_id", passage.passage_id)
            self._by_id[passage.passage_id] = passage

    @property
    def passages(self) -> Tuple[Passage, ...]:
        return self._passages

    @property
    def documents(self) -> Tuple[Document, ...]:
        return self._documents

    @property
    def passage_ids(self) -> List[str]:
        return [p.passage_id for p in self._passages]

    def get(self, passage_id: str) -> Optional[Passage]:
        return self._by_id.get(passage_id)

    def __contains__(self, passage_id: object) -> bool:
        return passage_id in self._by_id

    def __len__(self) -> int:
        return len(self._passages)

    def __iter__(self) -> Iterator[Passage]:
        return iter(self._passages)
