"""Latent-space annotation: K-means++ subtypes ranked by distance from
the healthy reference, nearest-neighbor retrieval, partition agreement,
and a 2-D principal-component view."""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from . import container


@dataclass
class LatentSpace:
    """Embeddings with their sample bookkeeping.

    labels are "C" (control) / "P" (lesion); archetype_ids are only
    present for synthetic cohorts where the generator is known.
    """

    embeddings: np.ndarray
    labels: np.ndarray
    patient_ids: np.ndarray
    archetype_ids: np.ndarray | None = None

    def __post_init__(self):
        self.embeddings = np.asarray(self.embeddings, dtype=float)
        self.labels = np.asarray(self.labels)
        self.patient_ids = np.asarray(self.patient_ids)
        if self.embeddings.ndim != 2:
            raise ValueError(f"embeddings must be (n, d), got shape {self.embeddings.shape}")
        n = self.embeddings.shape[0]
        if self.labels.shape != (n,) or self.patient_ids.shape != (n,):
            raise ValueError("labels and patient_ids must have one entry per embedding")
        bad = set(np.unique(self.labels)) - {"C", "P"}
        if bad:
            raise ValueError(f"labels must be 'C' or 'P', found {sorted(bad)}")
        if self.archetype_ids is not None:
            self.archetype_ids = np.asarray(self.archetype_ids)
            if self.archetype_ids.shape != (n,):
                raise ValueError("archetype_ids must have one entry per embedding")

    def __len__(self) -> int:
        return self.embeddings.shape[0]


@dataclass
class ClusterModel:
    """K-means++ clusters of lesion embeddings, ranked by centroid
    distance to the healthy reference (type 1 = nearest), plus the
    annotated holdout used for nearest-neighbor prediction."""

    centroids: np.ndarray  # (k, d), raw cluster order
    reference: np.ndarray  # (d,) mean healthy embedding
    ranking: np.ndarray  # ranking[raw cluster j] = type in 1..k
    holdout_embeddings: np.ndarray  # (m, d)
    holdout_types: np.ndarray  # (m,), 0 = healthy
    k_nn: int = 5

    def __post_init__(self):
        self.centroids = np.asarray(self.centroids, dtype=float)
        self.reference = np.asarray(self.reference, dtype=float)
        self.ranking = np.asarray(self.ranking, dtype=int)
        self.holdout_embeddings = np.asarray(self.holdout_embeddings, dtype=float)
        self.holdout_types = np.asarray(self.holdout_types, dtype=int)
        k = self.centroids.shape[0]
        if sorted(self.ranking.tolist()) != list(range(1, k + 1)):
            raise ValueError(f"ranking must be a bijection onto 1..{k}, got {self.ranking}")

    @property
    def k(self) -> int:
        return self.centroids.shape[0]

    def centroid_of_type(self, t: int) -> np.ndarray:
        (j,) = np.nonzero(self.ranking == t)[0]
        return self.centroids[j]


@dataclass
class KMeansResult:
    labels: np.ndarray
    centroids: np.ndarray
    wcss: float


def _dist2(points: np.ndarray, centers: np.ndarray) -> np.ndarray:
    return ((points[:, None, :] - centers[None, :, :]) ** 2).sum(axis=2)


def _seed_centers(points: np.ndarray, k: int, rng: np.random.Generator) -> np.ndarray:
    """k-means++ seeding: next center drawn with probability proportional
    to squared distance from the chosen set."""
    n = points.shape[0]
    centers = [points[int(rng.integers(n))]]
    d2 = ((points - centers[0]) ** 2).sum(axis=1)
    for _ in range(1, k):
        total = d2.sum()
        if total <= 0:  # all mass already covered; any point is as good
            idx = int(rng.integers(n))
        else:
            idx = int(rng.choice(n, p=d2 / total))
        centers.append(points[idx])
        d2 = np.minimum(d2, ((points - centers[-1]) ** 2).sum(axis=1))
    return np.stack(centers)


def kmeans_pp(points: np.ndarray, k: int, seed: int = 0, restarts: int = 10, max_iter: int = 300) -> KMeansResult:
    """Best-of-restarts k-means++ with Lloyd refinement to an assignment
    fixpoint; empty clusters re-seed at the farthest point."""
    points = np.asarray(points, dtype=float)
    if points.ndim != 2:
        raise ValueError(f"points must be (n, d), got shape {points.shape}")
    n = points.shape[0]
    if not 1 <= k <= n:
        raise ValueError(f"need n >= k >= 1, got n={n}, k={k}")

    best: KMeansResult | None = None
    for r in range(restarts):
        rng = np.random.default_rng([seed, r])
        centers = _seed_centers(points, k, rng)
        labels = None
        for _ in range(max_iter):
            d2 = _dist2(points, centers)
            new_labels = d2.argmin(axis=1)
            if labels is not None and np.array_equal(new_labels, labels):
                break
            labels = new_labels
            centers = centers.copy()
            for j in range(k):
                members = points[labels == j]
                if len(members):
                    centers[j] = members.mean(axis=0)
                else:
                    centers[j] = points[d2.min(axis=1).argmax()]
        d2 = _dist2(points, centers)
        labels = d2.argmin(axis=1)
        wcss = float(d2[np.arange(n), labels].sum())
        if best is None or wcss < best.wcss:
            best = KMeansResult(labels=labels, centroids=centers, wcss=wcss)
    return best


def annotate(latent: LatentSpace, k: int = 5, seed: int = 0, restarts: int = 10, k_nn: int = 5) -> ClusterModel:
    """Cluster the lesion embeddings and rank the clusters by distance
    from the mean healthy embedding; healthy samples become type 0."""
    is_p = latent.labels == "P"
    is_c = latent.labels == "C"
    if not is_c.any() or not is_p.any():
        raise ValueError("annotation needs both lesion and control samples")
    lesion = latent.embeddings[is_p]
    if lesion.shape[0] < k:
        raise ValueError(f"{lesion.shape[0]} lesion samples cannot form {k} clusters")
    reference = latent.embeddings[is_c].mean(axis=0)

    km = kmeans_pp(lesion, k, seed=seed, restarts=restarts)
    ref_dist = np.sqrt(((km.centroids - reference) ** 2).sum(axis=1))
    order = np.argsort(ref_dist, kind="stable")
    ranking = np.empty(k, dtype=int)
    ranking[order] = np.arange(1, k + 1)

    holdout_emb = np.concatenate([lesion, latent.embeddings[is_c]])
    holdout_types = np.concatenate([ranking[km.labels], np.zeros(is_c.sum(), dtype=int)])
    return ClusterModel(
        centroids=km.centroids,
        reference=reference,
        ranking=ranking,
        holdout_embeddings=holdout_emb,
        holdout_types=holdout_types,
        k_nn=k_nn,
    )


def knn_predict(query: np.ndarray, model: ClusterModel, k_nn: int | None = None) -> np.ndarray:
    """Probability vector over types 0..k from nearest-neighbor votes;
    distance ties go to the earlier holdout entry."""
    query = np.asarray(query, dtype=float)
    if query.shape != (model.holdout_embeddings.shape[1],):
        raise ValueError(
            f"query shape {query.shape} does not match embedding dim {model.holdout_embeddings.shape[1]}"
        )
    k_nn = model.k_nn if k_nn is None else int(k_nn)
    m = model.holdout_embeddings.shape[0]
    if not 1 <= k_nn <= m:
        raise ValueError(f"k_nn must be in [1, {m}], got {k_nn}")
    dist = ((model.holdout_embeddings - query) ** 2).sum(axis=1)
    nearest = np.argsort(dist, kind="stable")[:k_nn]
    probs = np.zeros(model.k + 1)
    for idx in nearest:
        probs[model.holdout_types[idx]] += 1.0
    return probs / k_nn


def dsc_matrix(partition_a, partition_b, classes_a=None, classes_b=None):
    """Dice overlap of every class pair between two labelings of the
    same samples. Returns (matrix, classes_a, classes_b)."""
    a = np.asarray(partition_a)
    b = np.asarray(partition_b)
    if a.shape != b.shape or a.ndim != 1:
        raise ValueError("partitions must be equal-length 1-d labelings")
    classes_a = sorted(np.unique(a).tolist()) if classes_a is None else list(classes_a)
    classes_b = sorted(np.unique(b).tolist()) if classes_b is None else list(classes_b)
    out = np.zeros((len(classes_a), len(classes_b)))
    for i, ca in enumerate(classes_a):
        in_a = a == ca
        for j, cb in enumerate(classes_b):
            in_b = b == cb
            denom = int(in_a.sum()) + int(in_b.sum())
            if denom == 0:  # class absent on both sides
                continue
            out[i, j] = 2.0 * int((in_a & in_b).sum()) / denom
    return out, classes_a, classes_b


def project_2d(embeddings: np.ndarray) -> tuple[np.ndarray, bool]:
    """Top-2 principal components of the mean-centered embeddings.

    Sign convention: each component's largest-magnitude loading is made
    positive. Returns (coords, degenerate); an all-identical input is
    degenerate and maps to the origin.
    """
    x = np.asarray(embeddings, dtype=float)
    if x.ndim != 2 or x.shape[0] < 2:
        raise ValueError(f"need at least two embeddings, got shape {x.shape}")
    centered = x - x.mean(axis=0)
    u, s, vt = np.linalg.svd(centered, full_matrices=False)
    tol = max(x.shape) * np.finfo(float).eps * (s[0] if s.size else 0.0)
    if s.size == 0 or s[0] <= tol or s[0] == 0.0:
        return np.zeros((x.shape[0], 2)), True
    coords = np.zeros((x.shape[0], 2))
    for comp in range(min(2, vt.shape[0])):
        v = vt[comp]
        if v[np.argmax(np.abs(v))] < 0:
            v = -v
        coords[:, comp] = centered @ v
    return coords, False


# -- persistence -----------------------------------------------------------


def save_cluster_model(path, model: ClusterModel) -> None:
    header = {
        "kind": "cluster_model",
        "centroids": [[float(v) for v in row] for row in model.centroids],
        "reference": [float(v) for v in model.reference],
        "ranking": [int(v) for v in model.ranking],
        "holdout_types": [int(v) for v in model.holdout_types],
        "holdout_shape": list(model.holdout_embeddings.shape),
        "k_nn": int(model.k_nn),
    }
    payload = np.ascontiguousarray(model.holdout_embeddings, dtype="<f8").tobytes()
    container.write_blob(path, header, payload)


def save_latent(path, space: LatentSpace) -> None:
    header = {
        "kind": "latent",
        "shape": list(space.embeddings.shape),
        "labels": [str(v) for v in space.labels],
        "patient_ids": [str(v) for v in space.patient_ids],
        "archetype_ids": None
        if space.archetype_ids is None
        else [int(v) for v in space.archetype_ids],
    }
    payload = np.ascontiguousarray(space.embeddings, dtype="<f8").tobytes()
    container.write_blob(path, header, payload)


def load_latent(path) -> LatentSpace:
    header, payload = container.read_blob(path)
    if header.get("kind") != "latent":
        raise container.ContainerError(f"{path}: not a latent space")
    shape = tuple(header["shape"])
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(payload) != expected:
        raise container.ContainerError(
            f"{path}: embedding blob is {len(payload)} bytes, expected {expected}"
        )
    arch = header.get("archetype_ids")
    return LatentSpace(
        embeddings=np.frombuffer(payload, dtype="<f8").reshape(shape).astype(float),
        labels=np.array(header["labels"]),
        patient_ids=np.array(header["patient_ids"]),
        archetype_ids=None if arch is None else np.array(arch, dtype=int),
    )


def load_cluster_model(path) -> ClusterModel:
    header, payload = container.read_blob(path)
    if header.get("kind") != "cluster_model":
        raise container.ContainerError(f"{path}: not a cluster model")
    shape = tuple(header["holdout_shape"])
    expected = int(np.prod(shape, dtype=np.int64)) * 8
    if len(payload) != expected:
        raise container.ContainerError(f"{path}: holdout blob is {len(payload)} bytes, expected {expected}")
    holdout = np.frombuffer(payload, dtype="<f8").reshape(shape).astype(float)
    return ClusterModel(
        centroids=np.array(header["centroids"], dtype=float),
        reference=np.array(header["reference"], dtype=float),
        ranking=np.array(header["ranking"], dtype=int),
        holdout_embeddings=holdout,
        holdout_types=np.array(header["holdout_types"], dtype=int),
        k_nn=int(header["k_nn"]),
    )
