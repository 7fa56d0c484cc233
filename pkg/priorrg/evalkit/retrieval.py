import logging
from typing import Dict, List, Sequence, Tuple

import numpy as np
import torch

from priorrg.config import RunConfig
from priorrg.corpus.dataset import Corpus, build_retrieval_set, make_loader
from priorrg.corpus.grammar import primary_category
from priorrg.errors import ConfigError
from priorrg.modeling.priorrg import PriorRGModel
from priorrg.models.schemas import RetrievalReport

logger = logging.getLogger(__name__)


def retrieval_precision(image_embeddings: np.ndarray, report_embeddings: np.ndarray,
                        categories: Sequence[str], study_ids: Sequence[str],
                        ks: Sequence[int]) -> Tuple[Dict[str, float], Dict[str, float]]:
    """
    Rank every report for every query image by cosine similarity (the query's
    own report included) and average Cat-P@K / Stu-P@K over the queries.
    Embeddings are L2-normalized, so cosine similarity is the dot product.
    """
    n = len(study_ids)
    for k in ks:
        if not 1 <= k <= n:
            raise ConfigError(f"Retrieval K={k} outside 1..{n} (retrieval set size)")
    sims = np.asarray(image_embeddings, dtype=np.float64) @ np.asarray(report_embeddings, dtype=np.float64).T
    ranking = np.argsort(-sims, axis=1, kind="stable")
    categories = np.asarray(categories)
    studies = np.asarray(study_ids)

    cat_hits = categories[ranking] == categories[:, None]
    stu_hits = studies[ranking] == studies[:, None]
    cat = {str(k): float(cat_hits[:, :k].mean()) for k in ks}
    stu = {str(k): float(stu_hits[:, :k].mean()) for k in ks}
    return cat, stu


@torch.no_grad()
def embed_studies(model: PriorRGModel, corpus: Corpus, records, config: RunConfig) -> Tuple[np.ndarray, np.ndarray]:
    """Image and report embeddings for `records`, row-aligned"""
    model.eval()
    images: List[np.ndarray] = []
    reports: List[np.ndarray] = []
    for batch in make_loader(corpus, records, config, config.stage1_batch_size):
        images.append(model.image_embedding(batch).numpy())
        reports.append(model.report_embedding(batch).numpy())
    return np.concatenate(images), np.concatenate(reports)


def retrieval_eval(model: PriorRGModel, corpus: Corpus, config: RunConfig) -> RetrievalReport:
    records = build_retrieval_set(corpus.split(config.retrieval_split), config.retrieval_per_class, config.seed)
    image_emb, report_emb = embed_studies(model, corpus, records, config)
    cat, stu = retrieval_precision(
        image_emb, report_emb,
        categories=[primary_category(r.labels()) for r in records],
        study_ids=[r.study_id for r in records],
        ks=config.retrieval_k,
    )
    report = RetrievalReport(n_queries=len(records), per_class=config.retrieval_per_class,
                             cat_precision=cat, stu_precision=stu)
    logger.info(f"✅ Retrieval over {len(records)} studies: " +
                ", ".join(f"Cat-P@{k}={cat[k]:.3f} Stu-P@{k}={stu[k]:.3f}" for k in cat))
    return report
