# src/services/synthetic_corpus_service.py
import json
import logging
import random
from pathlib import Path
from typing import Dict, List, Optional, Tuple, Union

from ..models.config_models import DenseConfig, SynthConfig
from ..models.corpus_models import Corpus, Passage, Qrels, Query
from ..utils.trec_io import write_qrels
from .dense_retriever_service import hash_slot

logger = logging.getLogger(__name__)

PathLike = Union[str, Path]
QUERY_TERMS = 4
PATTERN_REPEATS = 2
PARAPHRASE_REPEATS = 3
MAX_PARTNER_SEARCH = 200_000


class SyntheticCorpusService:
    """
    Generates a seeded desk-scale passage collection with known relevance.

    Every query owns a few topic tokens. Its relevant passages come in two
    kinds: lexical ones contain the topic tokens themselves, each next to a
    partner token that cancels its hash-embedding mass (findable by BM25,
    invisible to the hashed dense encoder); paraphrase ones contain none of the
    topic tokens but repeat stand-ins that hash to the same embedding slot with
    the same sign (findable only densely). Lexical distractors carrying a
    single topic token are judged 0; the rest of the collection is filler.
    """

    def __init__(self, config: Optional[SynthConfig] = None, dense: Optional[DenseConfig] = None):
        logger.info("SyntheticCorpusService initialized.")
        self.config = config or SynthConfig()
        self.dense = dense or DenseConfig()
        self._partner_cache: Dict[Tuple[str, bool, int], str] = {}

    def _partner(self, token: str, same_sign: bool, variant: int) -> str:
        """
        Finds the `variant`-th token (searching `<token>p<j>` or `<token>n<j>`)
        hashing to the slot of `token` with the same or the opposite sign.
        """
        key = (token, same_sign, variant)
        if key in self._partner_cache:
            return self._partner_cache[key]
        dim, seed = self.dense.dim, self.dense.seed
        index, sign = hash_slot(token, dim, seed)
        marker = "p" if same_sign else "n"
        wanted = sign if same_sign else -sign
        found = -1
        for j in range(MAX_PARTNER_SEARCH):
            candidate = f"{token}{marker}{j}"
            if hash_slot(candidate, dim, seed) == (index, wanted):
                found += 1
                if found == variant:
                    self._partner_cache[key] = candidate
                    return candidate
        raise RuntimeError(f"no hash partner found for token '{token}'")

    def _filler(self, rng: random.Random, n: int) -> List[str]:
        return [f"w{rng.randrange(self.config.vocab)}" for _ in range(n)]

    def _lexical_passage(self, rng: random.Random, topic: List[str]) -> List[str]:
        pattern = []
        for token in topic:
            pattern.extend([token, self._partner(token, same_sign=False, variant=0)])
        body = pattern * PATTERN_REPEATS
        padding = max(self.config.doc_length - len(body), 0)
        head = rng.randint(0, padding)
        return self._filler(rng, head) + body + self._filler(rng, padding - head)

    def _paraphrase_passage(self, rng: random.Random, topic: List[str], variant: int) -> List[str]:
        stand_ins = [self._partner(token, same_sign=True, variant=variant) for token in topic]
        tokens = stand_ins * PARAPHRASE_REPEATS
        tokens += self._filler(rng, max(self.config.doc_length - len(tokens), 0))
        rng.shuffle(tokens)
        return tokens

    def _distractor_passage(self, rng: random.Random, token: str) -> List[str]:
        tokens = self._filler(rng, 2 * self.config.doc_length)
        tokens.insert(rng.randrange(len(tokens) + 1), token)
        return tokens

    def run(self) -> Tuple[Corpus, List[Query], Qrels]:
        """
        Returns:
            The passage corpus, the queries and the qrels (grade 2 for
            constructed relevants, 0 for lexical distractors).

        Raises:
            ValueError: If n_docs cannot hold the relevant and distractor
                        passages of every query.
        """
        c = self.config
        per_query = c.relevant_per_query + c.distractors_per_query
        if c.n_docs < c.n_queries * per_query:
            raise ValueError(
                f"n_docs {c.n_docs} is too small for {c.n_queries} queries x {per_query} constructed passages"
            )
        rng = random.Random(c.seed)
        n_lexical = round(c.lexical_fraction * c.relevant_per_query)

        texts: List[List[str]] = []
        labels: List[Optional[Tuple[str, int]]] = []
        queries: List[Query] = []
        for qi in range(c.n_queries):
            query_id = f"q{qi}"
            topic = [f"q{qi}t{i}" for i in range(QUERY_TERMS)]
            queries.append(Query(query_id=query_id, text=" ".join(topic)))
            for r in range(c.relevant_per_query):
                if r < n_lexical:
                    texts.append(self._lexical_passage(rng, topic))
                else:
                    texts.append(self._paraphrase_passage(rng, topic, variant=r - n_lexical))
                labels.append((query_id, 2))
            for d in range(c.distractors_per_query):
                texts.append(self._distractor_passage(rng, topic[d % QUERY_TERMS]))
                labels.append((query_id, 0))
        while len(texts) < c.n_docs:
            texts.append(self._filler(rng, c.doc_length))
            labels.append(None)

        order = list(range(len(texts)))
        rng.shuffle(order)
        width = len(str(c.n_docs - 1))
        passages = []
        judgments: Dict[str, Dict[str, int]] = {}
        for position, source in enumerate(order):
            passage_id = f"p{position:0{width}d}"
            passages.append(Passage(passage_id=passage_id, parent_doc_id=passage_id, text=" ".join(texts[source])))
            if labels[source] is not None:
                query_id, grade = labels[source]
                judgments.setdefault(query_id, {})[passage_id] = grade

        corpus = Corpus(passages)
        logger.info(f"Generated {len(corpus)} passages and {len(queries)} queries "
                    f"({n_lexical} lexical of {c.relevant_per_query} relevant per query).")
        return corpus, queries, Qrels(judgments=judgments)

    @staticmethod
    def write(corpus: Corpus, queries: List[Query], qrels: Qrels, output_dir: PathLike) -> Dict[str, Path]:
        """Writes corpus.jsonl, queries.tsv and qrels.txt; returns their paths."""
        output_dir = Path(output_dir)
        output_dir.mkdir(parents=True, exist_ok=True)
        paths = {
            "corpus": output_dir / "corpus.jsonl",
            "queries": output_dir / "queries.tsv",
            "qrels": output_dir / "qrels.txt",
        }
        with open(paths["corpus"], 'w', encoding='utf-8') as f:
            for passage in corpus:
                f.write(json.dumps({"passage_id": passage.passage_id, "text": passage.text}) + "\n")
        with open(paths["queries"], 'w', encoding='utf-8') as f:
            for query in queries:
                f.write(f"{query.query_id}\t{query.text}\n")
        write_qrels(qrels, paths["qrels"])
        logger.info(f"Wrote synthetic collection to {output_dir}.")
        return paths


def generate_synthetic(config: Optional[SynthConfig] = None,
                       dense: Optional[DenseConfig] = None) -> Tuple[Corpus, List[Query], Qrels]:
    return SyntheticCorpusService(config, dense).run()
