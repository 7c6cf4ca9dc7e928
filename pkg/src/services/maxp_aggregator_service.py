# src/services/maxp_aggregator_service.py
import logging
from typing import Dict, List, Optional

from ..models.candidate_models import Run, RunEntry, rank_key
from .passage_splitter_service import parse_parent_doc_id

logger = logging.getLogger(__name__)


class MaxPAggregatorService:
    """
    Turns a passage-level run into a document-level run (MaxP).

    This is the final step of the document task: passage ids are mapped back to
    the ids of the documents they were cut from, and each document is
    represented by its best-scoring passage.
    """

    def __init__(self):
        logger.info("MaxPAggregatorService initialized.")

    def run(self, passage_run: Run, tag: Optional[str] = None) -> Run:
        """
        Aggregates every query of a passage run.

        Args:
            passage_run: query_id -> passage-level entries.
            tag: Run tag of the output; defaults to the tag of the input entries.

        Returns:
            query_id -> document entries ranked by score desc, ties by doc_id asc.

        Raises:
            ValueError: If a passage id has no recoverable parent document id.
        """
        document_run: Run = {}
        for query_id in sorted(passage_run):
            document_run[query_id] = self.aggregate_query(query_id, passage_run[query_id], tag)
        logger.info(f"Aggregated {sum(len(e) for e in passage_run.values())} passage entries "
                    f"into {sum(len(e) for e in document_run.values())} document entries.")
        return document_run

    @staticmethod
    def aggregate_query(query_id: str, entries: List[RunEntry], tag: Optional[str] = None) -> List[RunEntry]:
        best: Dict[str, float] = {}
        for entry in entries:
            doc_id = parse_parent_doc_id(entry.doc_id)
            if doc_id not in best or entry.score > best[doc_id]:
                best[doc_id] = entry.score
        out_tag = tag or (entries[0].tag if entries else "maxp")
        ranked = sorted(best.items(), key=lambda item: rank_key(item[0], item[1]))
        return [
            RunEntry(query_id=query_id, doc_id=doc_id, rank=rank, score=score, tag=out_tag)
            for rank, (doc_id, score) in enumerate(ranked, start=1)
        ]


def maxp_aggregate(passage_run: Run, tag: Optional[str] = None) -> Run:
    return MaxPAggregatorService().run(passage_run, tag)
