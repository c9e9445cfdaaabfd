"""Brute-force path enumeration used as an independent oracle in tests."""
import itertools

import numpy as np
from scipy.special import logsumexp


def path_logweights(x, log_init, log_ref, cost, eps, v, theta):
    N = len(log_ref)
    M = x.size
    paths = np.array(list(itertools.product(range(M), repeat=N + 1)))
    lw = log_init[paths[:, 0]] + v[0][paths[:, 0]]
    for t in range(N):
        a, b = paths[:, t], paths[:, t + 1]
        lw = lw + log_ref[t][a, b] - cost[t][a, b] / eps + v[t + 1][b] + theta[t][a] * (x[b] - x[a])
    return paths, lw


def gibbs_marginals(x, log_init, log_ref, cost, eps, v, theta):
    paths, lw = path_logweights(x, log_init, log_ref, cost, eps, v, theta)
    p = np.exp(lw - logsumexp(lw))
    M = x.size
    return np.array([np.bincount(paths[:, t], weights=p, minlength=M) for t in range(paths.shape[1])]), logsumexp(lw)
