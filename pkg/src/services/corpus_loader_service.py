# src/services/corpus_loader_service.py
import logging
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from pydantic import ValidationError

from ..models.config_models import CorpusConfig
from ..models.corpus_models import Corpus, Document, Passage, Qrels, Query
from ..utils.errors import DuplicateIdError, FormatError
from ..utils.trec_io import iter_jsonl, iter_lines, read_qrels
from .passage_splitter_service import PassageSplitterService

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]


class CorpusLoaderService:
    """
    Ingests corpora, queries and relevance judgments.

    Passage records are indexed as they are; document records are either split
    into sliding-window passages or, with `split_documents` off, indexed whole.
    """

    def __init__(self, config: Optional[CorpusConfig] = None):
        logger.info("CorpusLoaderService initialized.")
        self.config = config or CorpusConfig()
        self.splitter = PassageSplitterService(self.config.window, self.config.stride)

    def run(self) -> Tuple[Corpus, List[Query], Optional[Qrels]]:
        """Loads the corpus, queries and (optional) qrels named in the configuration."""
        if not self.config.path or not self.config.queries_path:
            raise ValueError("corpus.path and corpus.queries_path must be configured.")
        corpus = self.load_corpus(self.config.path)
        queries = self.load_queries(self.config.queries_path)
        qrels = self.load_qrels(self.config.qrels_path) if self.config.qrels_path else None
        return corpus, queries, qrels

    def load_corpus(self, path: PathLike, format: Optional[str] = None) -> Corpus:
        format = format or self.config.format
        if format == 'jsonl':
            documents, passages = self._read_jsonl_records(path)
        elif format == 'tsv':
            documents, passages = self._read_tsv_records(path)
        else:
            raise ValueError(f"Unsupported corpus format: {format}")

        if documents:
            if self.config.split_documents:
                passages = self.splitter.run(documents)
            else:
                passages = [
                    Passage(passage_id=d.doc_id, parent_doc_id=d.doc_id, text=d.text)
                    for d in documents
                ]
        corpus = Corpus(passages, documents)
        logger.info(f"Loaded corpus from {path}: {len(documents)} documents, {len(corpus)} passages.")
        return corpus

    def load_queries(self, path: PathLike) -> List[Query]:
        queries: List[Query] = []
        seen = set()
        for line_number, line in iter_lines(path):
            query_id, sep, text = line.partition('\t')
            if not sep or not query_id.strip():
                raise FormatError(path, line_number, "expected 'query_id<TAB>text'")
            query_id = query_id.strip()
            if query_id in seen:
                raise DuplicateIdError("query_id", query_id, str(path))
            seen.add(query_id)
            queries.append(Query(query_id=query_id, text=text))
        logger.info(f"Loaded {len(queries)} queries from {path}.")
        return queries

    def load_qrels(self, path: PathLike) -> Qrels:
        qrels = read_qrels(path)
        logger.info(f"Loaded {len(qrels)} judgments for {len(qrels.query_ids())} queries from {path}.")
        return qrels

    def _read_jsonl_records(self, path: PathLike) -> Tuple[List[Document], List[Passage]]:
        documents: List[Document] = []
        passages: List[Passage] = []
        seen: Dict[str, int] = {}
        for line_number, record in iter_jsonl(path):
            try:
                if 'passage_id' in record:
                    if documents:
                        raise FormatError(path, line_number, "passage record in a document corpus")
                    passage_id = str(record['passage_id'])
                    item = Passage(
                        passage_id=passage_id,
                        parent_doc_id=str(record.get('parent_doc_id') or passage_id),
                        text=record.get('text') or "",
                    )
                    identifier = passage_id
                    passages.append(item)
                elif 'doc_id' in record:
                    if passages:
                        raise FormatError(path, line_number, "document record in a passage corpus")
                    item = Document(doc_id=str(record['doc_id']), text=record.get('text') or "",
                                    title=record.get('title'))
                    identifier = item.doc_id
                    documents.append(item)
                else:
                    raise FormatError(path, line_number, "record has neither 'doc_id' nor 'passage_id'")
            except ValidationError as e:
                raise FormatError(path, line_number, f"invalid record: {e.errors()[0]['msg']}")
            if identifier in seen:
                raise DuplicateIdError("id", identifier, str(path))
            seen[identifier] = line_number
        return documents, passages

    def _read_tsv_records(self, path: PathLike) -> Tuple[List[Document], List[Passage]]:
        documents: List[Document] = []
        passages: List[Passage] = []
        seen = set()
        for line_number, line in iter_lines(path):
            identifier, sep, text = line.partition('\t')
            identifier = identifier.strip()
            if not sep or not identifier:
                raise FormatError(path, line_number, "expected 'id<TAB>text'")
            if identifier in seen:
                raise DuplicateIdError("id", identifier, str(path))
            seen.add(identifier)
            if self.config.kind == 'document':
                documents.append(Document(doc_id=identifier, text=text))
            else:
                passages.append(Passage(passage_id=identifier, parent_doc_id=identifier, text=text))
        return documents, passages
