import numpy as np

from shapclust.model import MLP, REGRESSION, FunctionPredictor


def random_mlp(n_features, seed, hidden=(6,), n_outputs=1, kind=REGRESSION, activation="tanh"):
    """Small net with random weights and biases, so outputs are genuinely
    nonlinear in every feature."""
    rng = np.random.default_rng(seed)
    widths = [n_features, *hidden, n_outputs]
    W = [rng.normal(0, 1.0, (a, b)) for a, b in zip(widths[:-1], widths[1:])]
    b = [rng.normal(0, 0.5, w) for w in widths[1:]]
    names = ["y"] if n_outputs == 1 else [f"y{i}" for i in range(n_outputs)]
    return MLP(W, b, names, [kind] * n_outputs, activation)


def linear(w):
    w = np.asarray(w, dtype=float)
    return FunctionPredictor(lambda X: X @ w, w.size)




def write_labeled_csv(dataset, truth, path):
    """Feature table plus a partial ``label`` column and a ``truth`` column."""
    import csv

    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["sample_id", *dataset.feature_names, "label", "truth"])
        for i in range(dataset.n_samples):
            w.writerow([dataset.sample_ids[i], *(f"{v:.17g}" for v in dataset.rows[i]),
                        dataset.labels[i] or "", truth[i]])
    return path


def write_blobs_csv(path, seed=0, n_per=60):
    import csv

    from shapclust.synthetic import blobs

    X, y = blobs(n_per=n_per, centers=[(0, 0), (5, 0), (0, 5)], sigma=0.3, seed=seed)
    with open(path, "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["x", "y", "truth"])
        for row, t in zip(X, y):
            w.writerow([f"{row[0]:.17g}", f"{row[1]:.17g}", t])
    return path
