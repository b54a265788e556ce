"""Retrieval evaluation: mAP and CMC over a query/gallery split."""
from dataclasses import dataclass

import numpy as np
import torch

from upreid.encoder import EmbeddingBatch, Encoder, to_tensor


@dataclass
class RetrievalResult:
    map: float
    cmc: np.ndarray  # cmc[k - 1] = fraction of queries with a correct match in the top k

    def rank(self, k: int) -> float:
        return float(self.cmc[min(k, len(self.cmc)) - 1])


class MissingIdentityError(ValueError):
    pass


def extract_features(theta: Encoder, images, batch_size: int = 256) -> EmbeddingBatch:
    """Embed images with no gradient tracking."""
    images = list(images)
    dtype = next(theta.parameters()).dtype
    if not images:
        return EmbeddingBatch(torch.empty(0, theta.embedding_dim, dtype=dtype), False)
    chunks = []
    with torch.no_grad():
        for start in range(0, len(images), batch_size):
            chunks.append(theta(to_tensor(images[start:start + batch_size], dtype)))
    return EmbeddingBatch(torch.cat(chunks), False)


def _as_array(feats) -> np.ndarray:
    if isinstance(feats, EmbeddingBatch):
        feats = feats.values
    if isinstance(feats, torch.Tensor):
        feats = feats.detach().cpu().numpy()
    return np.asarray(feats, dtype=np.float64)


def cmc_map(query_feats, query_ids, gallery_feats, gallery_ids,
            query_cams=None, gallery_cams=None) -> RetrievalResult:
    """Rank the gallery by cosine similarity for every query.

    Ties are broken by gallery index. When camera ids are given, gallery
    items sharing both identity and camera with the query are dropped (the
    usual cross-camera protocol); by default nothing is filtered.
    """
    qf, gf = _as_array(query_feats), _as_array(gallery_feats)
    q_ids, g_ids = np.asarray(query_ids), np.asarray(gallery_ids)
    if len(qf) == 0:
        raise ValueError("need at least one query")
    missing = sorted({str(q) for q in q_ids} - {str(g) for g in g_ids})
    if missing:
        raise MissingIdentityError(f"query identities absent from gallery: {', '.join(missing)}")

    sims = qf @ gf.T
    # stable sort on negated similarity keeps gallery order among ties
    order = np.argsort(-sims, axis=1, kind="stable")
    matches = g_ids[order] == q_ids[:, None]
    n_gallery = gf.shape[0]

    cmc = np.zeros(n_gallery)
    aps = np.empty(len(qf))
    for qi in range(len(qf)):
        hit = matches[qi]
        if query_cams is not None and gallery_cams is not None:
            g_cams = np.asarray(gallery_cams)[order[qi]]
            hit = hit[~(hit & (g_cams == np.asarray(query_cams)[qi]))]
            if not hit.any():
                raise MissingIdentityError(f"query {qi} has no cross-camera match")
        positions = np.flatnonzero(hit)
        cmc[positions[0]:] += 1
        precision_at_hits = np.arange(1, len(positions) + 1) / (positions + 1)
        aps[qi] = precision_at_hits.mean()
    return RetrievalResult(map=float(aps.mean()), cmc=cmc / len(qf))


def evaluate_encoder(theta: Encoder, query_images, query_ids, gallery_images, gallery_ids) -> RetrievalResult:
    return cmc_map(extract_features(theta, query_images), query_ids,
                   extract_features(theta, gallery_images), gallery_ids)
