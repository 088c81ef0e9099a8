"""Pure-numpy kernels. Same contracts as the compiled ``_core`` module."""
import numpy as np

ZERO_NORM = 1e-12


def group_stats(x, labels, k):
    """Per-group, per-channel mean and population std over (samples, H, W).

    ``x`` is float32 (B, C, H, W); ``labels`` assigns each sample to a group
    in ``[0, k)``. Accumulation is float64, two-pass.
    """
    B, C = x.shape[:2]
    flat = x.reshape(B, C, -1).astype(np.float64)
    hw = flat.shape[2]
    mean = np.zeros((k, C))
    std = np.zeros((k, C))
    for g in range(k):
        members = flat[labels == g]
        n = members.shape[0] * hw
        if n == 0:
            continue
        m = members.sum(axis=(0, 2)) / n
        dev = members - m[None, :, None]
        mean[g] = m
        std[g] = np.sqrt((dev * dev).sum(axis=(0, 2)) / n)
    return mean, std


def instance_means(x):
    B, C = x.shape[:2]
    flat = x.reshape(B, C, -1).astype(np.float64)
    return flat.sum(axis=2) / flat.shape[2]


def cosine_matrix(mu):
    """Pairwise cosine similarity of the rows of ``mu``; zero-norm rows give 0."""
    mu = np.asarray(mu, dtype=np.float64)
    # elementwise product + row sum keeps one fixed reduction order per pair
    dots = (mu[:, None, :] * mu[None, :, :]).sum(axis=2)
    norms = np.sqrt((mu * mu).sum(axis=1))
    denom = norms[:, None] * norms[None, :]
    ok = (norms[:, None] >= ZERO_NORM) & (norms[None, :] >= ZERO_NORM)
    with np.errstate(divide="ignore", invalid="ignore"):
        sim = np.where(ok, dots / np.where(ok, denom, 1.0), 0.0)
    return sim


def first_neighbors(mu):
    sim = cosine_matrix(mu)
    np.fill_diagonal(sim, -np.inf)
    # argmax returns the first (lowest) index among ties
    return np.argmax(sim, axis=1).astype(np.intp)


def components(adj):
    """Connected components of a symmetric adjacency matrix.

    Labels are numbered in order of each component's lowest member.
    """
    adj = np.asarray(adj, dtype=bool)
    B = adj.shape[0]
    parent = np.arange(B)

    def find(a):
        while parent[a] != a:
            parent[a] = parent[parent[a]]
            a = parent[a]
        return a

    ii, jj = np.nonzero(np.triu(adj, 1))
    for i, j in zip(ii.tolist(), jj.tolist()):
        ri, rj = find(i), find(j)
        if ri != rj:
            if ri < rj:
                parent[rj] = ri
            else:
                parent[ri] = rj
    labels = np.empty(B, dtype=np.intp)
    seen = {}
    for i in range(B):
        r = find(i)
        if r not in seen:
            seen[r] = len(seen)
        labels[i] = seen[r]
    return labels, len(seen)


def group_normalize(x, labels, mean, std, gamma, beta, eps):
    """gamma * (x - mean[g]) / sqrt(std[g]^2 + eps) + beta, per sample group g."""
    denom = np.sqrt(std * std + eps)  # (k, C)
    m = mean[labels][:, :, None, None]
    s = denom[labels][:, :, None, None]
    g = np.asarray(gamma, dtype=np.float64)[None, :, None, None]
    b = np.asarray(beta, dtype=np.float64)[None, :, None, None]
    out = g * (x.astype(np.float64) - m) / s + b
    return out.astype(np.float32)


def conv2d(x, weight, bias, stride, padding):
    """Cross-correlation with zero padding. float64 accumulation, float32 out."""
    B, C, H, W = x.shape
    O, I, kh, kw = weight.shape
    Ho = (H + 2 * padding - kh) // stride + 1
    Wo = (W + 2 * padding - kw) // stride + 1
    xp = np.pad(x.astype(np.float64), ((0, 0), (0, 0), (padding, padding), (padding, padding)))
    out = np.zeros((B, O, Ho, Wo))
    w = weight.astype(np.float64)
    for di in range(kh):
        for dj in range(kw):
            patch = xp[:, :, di : di + stride * Ho : stride, dj : dj + stride * Wo : stride]
            out += np.einsum("bchw,oc->bohw", patch, w[:, :, di, dj])
    out += np.asarray(bias, dtype=np.float64)[None, :, None, None]
    return out.astype(np.float32)
