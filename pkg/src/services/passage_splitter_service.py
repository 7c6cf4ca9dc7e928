# src/services/passage_splitter_service.py
import logging
from typing import List, Sequence

from ..models.corpus_models import PASSAGE_ID_SEPARATOR, Document, Passage, TokenSpan
from ..utils.text_utils import detokenize, tokenize

logger = logging.getLogger(__name__)


def passage_id_for(doc_id: str, window_index: int) -> str:
    return f"{doc_id}{PASSAGE_ID_SEPARATOR}{window_index}"


class PassageSplitterService:
    """
    Splits documents into overlapping token windows for the document task.

    Each window becomes a passage that takes part in retrieval and ranking on
    its own; document scores are recovered later by MaxP aggregation.
    """

    def __init__(self, window: int = 180, stride: int = 90):
        """
        Initializes the splitter.

        Args:
            window: Tokens per passage.
            stride: Tokens between consecutive window starts (1 <= stride <= window).
        """
        logger.info("PassageSplitterService initialized.")
        if window < 1:
            raise ValueError(f"window must be >= 1, got {window}")
        if not 1 <= stride <= window:
            raise ValueError(f"stride must satisfy 1 <= stride <= window ({window}), got {stride}")
        self.window = window
        self.stride = stride

    def run(self, documents: Sequence[Document]) -> List[Passage]:
        passages: List[Passage] = []
        empty = 0
        for document in documents:
            split = self.split_passages(document)
            if not split:
                empty += 1
            passages.extend(split)
        if empty:
            logger.warning(f"{empty} documents had no tokens and produced no passages.")
        logger.info(f"Split {len(documents)} documents into {len(passages)} passages.")
        return passages

    def split_passages(self, document: Document) -> List[Passage]:
        """
        Emits windows [i*stride, i*stride + window) until the document's last token is covered.

        A document with at most `window` tokens yields exactly one passage; an
        empty one yields none.
        """
        tokens = tokenize(document.text)
        passages = []
        start = 0
        window_index = 0
        while start < len(tokens):
            end = min(start + self.window, len(tokens))
            passages.append(Passage(
                passage_id=passage_id_for(document.doc_id, window_index),
                parent_doc_id=document.doc_id,
                text=detokenize(tokens[start:end]),
                token_span=TokenSpan(start=start, end=end),
            ))
            if end == len(tokens):
                break
            start += self.stride
            window_index += 1
        return passages


def parse_parent_doc_id(passage_id: str) -> str:
    """
    Recovers the document id from `<doc_id>#<window_index>`; ids without the
    separator are native passages and are their own document.

    Raises:
        ValueError: if the id has a separator but no document part or a
                    non-numeric window index.
    """
    if PASSAGE_ID_SEPARATOR not in passage_id:
        return passage_id
    doc_id, _, window_index = passage_id.rpartition(PASSAGE_ID_SEPARATOR)
    if not doc_id or not window_index.isdigit():
        raise ValueError(f"unparseable passage id '{passage_id}'")
    return doc_id
