"""The seven zoo algorithms.

KNN, LOF, IFOREST and the k-means step of CBLOF wrap scikit-learn; HBOS,
PCA_OD, AE_OD and the CBLOF scoring rule are implemented here.
"""

from __future__ import annotations

import warnings

import numpy as np
from sklearn.cluster import KMeans
from sklearn.ensemble import IsolationForest
from sklearn.exceptions import ConvergenceWarning
from sklearn.neighbors import LocalOutlierFactor, NearestNeighbors

from tda.errors import ValidationError
from tda.nn import AdamState, init_block, squared_error_loss
from tda.seeding import derive_seed
from tda.similarity import pca_fit, per_sample_error
from tda.zoo.base import (
    BaseDetector,
    all_rows_identical,
    boolean,
    positive_int,
    positive_real,
    register,
    unit_interval,
)


@register("HBOS")
class HBOS(BaseDetector):
    """Histogram-based outlier score.

    One equal-width histogram per feature over the training range; the
    score of a sample is the sum over features of -log(normalized bin
    height). Values outside the training range fall in an empty bin.
    """

    params = {
        "n_bins": (10, positive_int),
        "alpha": (0.1, positive_real),
    }

    def _fit(self, X):
        n = X.shape[0]
        bins = int(self.hp["n_bins"])
        self.edges_, self.log_heights_, self.empty_ = [], [], []
        for col in X.T:
            lo, hi = float(col.min()), float(col.max())
            if hi <= lo:
                # constant feature carries no information
                self.edges_.append(None)
                self.log_heights_.append(None)
                self.empty_.append(0.0)
                continue
            counts, edges = np.histogram(col, bins=bins, range=(lo, hi))
            heights = (counts + self.hp["alpha"]) / n
            top = heights.max()
            self.edges_.append(edges)
            self.log_heights_.append(-np.log(heights / top))
            self.empty_.append(-np.log(self.hp["alpha"] / n / top))

    def _score(self, X):
        total = np.zeros(X.shape[0])
        for j, edges in enumerate(self.edges_):
            if edges is None:
                continue
            col = X[:, j]
            idx = np.clip(np.searchsorted(edges, col, side="right") - 1, 0, len(edges) - 2)
            contrib = self.log_heights_[j][idx]
            outside = (col < edges[0]) | (col > edges[-1])
            total += np.where(outside, self.empty_[j], contrib)
        return total


@register("KNN")
class KNN(BaseDetector):
    """Distance to the k-th nearest training row."""

    params = {"n_neighbors": (5, positive_int)}

    def _fit(self, X):
        k = int(self.hp["n_neighbors"])
        if X.shape[0] <= k:
            raise ValidationError(f"KNN: n must exceed k (n={X.shape[0]}, k={k})")
        self.nn_ = NearestNeighbors(n_neighbors=k).fit(X)

    def _score(self, X):
        dist, _ = self.nn_.kneighbors(X)
        return dist[:, -1]


@register("LOF")
class LOF(BaseDetector):
    params = {"n_neighbors": (20, positive_int)}

    def _fit(self, X):
        k = int(self.hp["n_neighbors"])
        if X.shape[0] <= k:
            raise ValidationError(f"LOF: n must exceed k (n={X.shape[0]}, k={k})")
        if all_rows_identical(X):
            raise ValidationError("LOF: all training rows are identical")
        self.lof_ = LocalOutlierFactor(n_neighbors=k, novelty=True).fit(X)

    def _score(self, X):
        with warnings.catch_warnings():
            warnings.simplefilter("ignore")
            return -self.lof_.score_samples(X)


@register("IFOREST")
class IForest(BaseDetector):
    params = {
        "n_estimators": (100, positive_int),
        "max_samples": (256, positive_int),
    }

    def _fit(self, X):
        self.forest_ = IsolationForest(
            n_estimators=int(self.hp["n_estimators"]),
            max_samples=min(int(self.hp["max_samples"]), X.shape[0]),
            random_state=self.spec.seed,
        ).fit(X)

    def _score(self, X):
        return -self.forest_.score_samples(X)


@register("PCA_OD")
class PcaOD(BaseDetector):
    """Per-sample PCA reconstruction error; components default to min(D, 10)."""

    params = {"n_components": (None, positive_int)}

    def _fit(self, X):
        k = self.hp["n_components"]
        k = min(X.shape[1], 10 if k is None else int(k))
        self.pca_ = pca_fit(X, k)

    def _score(self, X):
        return per_sample_error(X, self.pca_)


@register("AE_OD")
class AutoencoderOD(BaseDetector):
    """Dense autoencoder trained with dropout on hidden activations.

    The score is the per-sample mean squared reconstruction error of the
    deterministic (dropout-free) network. Without dropout the default
    widths exceed the feature count of most tables and the network drifts
    towards the identity, which reconstructs outliers as well as inliers.
    """

    params = {
        "epochs": (100, positive_int),
        "enc_widths": ([128, 64], lambda v: all(positive_int(w) for w in v) and len(v) > 0),
        "dec_widths": ([64, 128], lambda v: all(positive_int(w) for w in v)),
        "learning_rate": (0.001, positive_real),
        "batch_size": (256, positive_int),
        "leaky_slope": (0.01, lambda v: v >= 0),
        "dropout": (0.2, lambda v: 0 <= v < 1),
    }

    def _fit(self, X):
        hp = self.hp
        rng = np.random.default_rng(derive_seed(self.spec.seed, "AE_OD", "init"))
        D = X.shape[1]
        slope = float(hp["leaky_slope"])
        enc = [int(w) for w in hp["enc_widths"]]
        dec = [int(w) for w in hp["dec_widths"]]
        self.enc_ = init_block(rng, [D, *enc], slope)
        self.dec_ = init_block(rng, [enc[-1], *dec, D], slope, linear_last=True)
        adam = AdamState(lr=float(hp["learning_rate"]))
        bs = int(hp["batch_size"])
        p = float(hp["dropout"])
        for epoch in range(int(hp["epochs"])):
            rng = np.random.default_rng(derive_seed(self.spec.seed, "AE_OD", epoch))
            order = rng.permutation(X.shape[0])
            for i in range(0, X.shape[0], bs):
                batch = X[order[i:i + bs]]
                h, c_enc = self.enc_.forward_cached(batch, p, rng)
                out, c_dec = self.dec_.forward_cached(h, p, rng)
                loss, g = squared_error_loss(batch, out)
                if not np.isfinite(loss):
                    raise ValidationError(f"AE_OD: training diverged at epoch {epoch + 1}")
                g_dec, g = self.dec_.backward(c_dec, g)
                g_enc, _ = self.enc_.backward(c_enc, g)
                adam.step("dec", self.dec_, g_dec)
                adam.step("enc", self.enc_, g_enc)

    def _score(self, X):
        out = self.dec_.forward(self.enc_.forward(X))
        return np.mean((X - out) ** 2, axis=1)


@register("CBLOF")
class CBLOF(BaseDetector):
    """Cluster-based local outlier factor.

    k-means clusters are split into large and small ones: the large set is
    the smallest prefix of clusters (sorted by size) covering ``alpha`` of
    the data, or ending where the size ratio to the next cluster reaches
    ``beta``. Samples in a large cluster score their distance to its
    centroid; samples in a small cluster score the distance to the nearest
    large centroid. With ``use_weights`` the distance is multiplied by the
    size of the sample's cluster.
    """

    params = {
        "n_clusters": (8, positive_int),
        "alpha": (0.9, unit_interval),
        "beta": (5.0, lambda v: positive_real(v) and v >= 1),
        "use_weights": (False, boolean),
        "max_iter": (100, positive_int),
    }

    def _fit(self, X):
        k = int(self.hp["n_clusters"])
        if all_rows_identical(X):
            raise ValidationError("CBLOF: all training rows are identical")
        n_distinct = np.unique(X, axis=0).shape[0]
        if n_distinct < k:
            raise ValidationError(f"CBLOF: {n_distinct} distinct rows cannot form {k} clusters")
        with warnings.catch_warnings():
            warnings.simplefilter("ignore", ConvergenceWarning)
            self.km_ = KMeans(
                n_clusters=k, n_init=1, max_iter=int(self.hp["max_iter"]),
                random_state=self.spec.seed,
            ).fit(X)
        sizes = np.bincount(self.km_.labels_, minlength=k)
        order = np.argsort(-sizes, kind="stable")
        sorted_sizes = sizes[order]
        n = X.shape[0]
        cut = k
        cum = np.cumsum(sorted_sizes)
        for b in range(k - 1):
            if cum[b] >= self.hp["alpha"] * n:
                cut = b + 1
                break
            if sorted_sizes[b + 1] > 0 and sorted_sizes[b] / sorted_sizes[b + 1] >= self.hp["beta"]:
                cut = b + 1
                break
        self.large_ = np.zeros(k, dtype=bool)
        self.large_[order[:cut]] = True
        self.sizes_ = sizes

    def _score(self, X):
        centers = self.km_.cluster_centers_
        assign = self.km_.predict(X)
        d_all = np.linalg.norm(X[:, None, :] - centers[None, :, :], axis=2)
        own = d_all[np.arange(X.shape[0]), assign]
        nearest_large = np.min(d_all[:, self.large_], axis=1)
        scores = np.where(self.large_[assign], own, nearest_large)
        if self.hp["use_weights"]:
            scores = scores * self.sizes_[assign]
        return scores
