"""Reference computations that share no code with the package."""

import math

import numpy as np


def svd_pinv(m, rcond=1e-12):
    return np.linalg.pinv(np.asarray(m, dtype=float), rcond=rcond)


def basic_blocks(net, tau2=0.0):
    """Each study as (baseline, others, y, cov) against its first treatment.

    Full pairwise blocks are cut down to the rows that involve the first
    treatment; a shared arm adds tau2/2 between contrasts.
    """
    out = []
    for sb in net.studies:
        base = sb.treatments[0] if sb.baseline is None else sb.baseline
        others = [t for t in sb.treatments if t != base]
        idx, sign = [], []
        for t in others:
            pair = (base, t) if base < t else (t, base)
            idx.append(sb.contrasts.index(pair))
            sign.append(1.0 if base < t else -1.0)
        s = np.array(sign)
        y = s * sb.effects[idx]
        cov = np.outer(s, s) * sb.cov[np.ix_(idx, idx)]
        k = len(others)
        cov = cov + tau2 * (0.5 * np.ones((k, k)) + 0.5 * np.eye(k))
        out.append((base, others, y, cov))
    return out


def dense_gls(net, tau2=0.0):
    """Constrained GLS in basic parameters d_t = theta(ref -> t).

    Returns (pairs, estimates, covariance) over all label pairs a<b.
    """
    labels = list(net.labels)
    T = len(labels)
    rows, ys, covs = [], [], []
    for base, others, y, cov in basic_blocks(net, tau2):
        for t in others:
            r = np.zeros(T)
            r[labels.index(t)] += 1.0
            r[labels.index(base)] -= 1.0
            rows.append(r[1:])
        ys.append(y)
        covs.append(cov)
    X = np.array(rows)
    y = np.concatenate(ys)
    n = len(y)
    W = np.zeros((n, n))
    i = 0
    for c in covs:
        k = c.shape[0]
        W[i:i + k, i:i + k] = np.linalg.inv(c)
        i += k
    cov_d = np.linalg.inv(X.T @ W @ X)
    d = cov_d @ X.T @ W @ y
    d = np.concatenate([[0.0], d])
    C = np.zeros((T, T))
    C[1:, 1:] = cov_d
    pairs, est, M = [], [], []
    for a in range(T):
        for b in range(a + 1, T):
            pairs.append((labels[a], labels[b]))
            est.append(d[b] - d[a])
            c = np.zeros(T)
            c[b], c[a] = 1.0, -1.0
            M.append(c)
    M = np.array(M)
    return pairs, np.array(est), M @ C @ M.T


def inconsistency_q(net, tau2=0.0):
    """Residual Mahalanobis norm from the basic-parameter fit."""
    labels = list(net.labels)
    pairs, est, _ = dense_gls(net, tau2)
    lookup = dict(zip(pairs, est))
    q = 0.0
    n_obs = 0
    for base, others, y, cov in basic_blocks(net, tau2):
        fitted = np.array([lookup[(base, t)] if base < t else -lookup[(t, base)] for t in others])
        r = y - fitted
        q += float(r @ np.linalg.solve(cov, r))
        n_obs += len(others)
    return q, n_obs - (len(labels) - 1)


def chi2_sf_df1(x):
    return math.erfc(math.sqrt(x / 2.0))


def chi2_sf_even(x, df):
    assert df % 2 == 0
    h = x / 2.0
    return math.exp(-h) * math.fsum(h**k / math.factorial(k) for k in range(df // 2))


def dersimonian_laird(y, v):
    y, v = np.asarray(y, float), np.asarray(v, float)
    w = 1.0 / v
    mu = np.sum(w * y) / np.sum(w)
    q = np.sum(w * (y - mu) ** 2)
    c = np.sum(w) - np.sum(w**2) / np.sum(w)
    return max(0.0, (q - (len(y) - 1)) / c)
