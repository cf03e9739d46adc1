"""Pure-numpy fallback for :mod:`phmor._kernels`."""

import numpy as np


def resolvent_batch(A, B, C, s):
    A = np.asarray(A, dtype=float)
    B = np.asarray(B, dtype=float)
    C = np.asarray(C, dtype=float)
    s = np.asarray(s, dtype=complex).ravel()
    r = A.shape[0]
    M = s[:, None, None] * np.eye(r) - A
    try:
        X = np.linalg.solve(M, np.broadcast_to(B, (len(s),) + B.shape))
        Yt = np.linalg.solve(np.swapaxes(M, 1, 2), np.broadcast_to(C.T, (len(s),) + C.T.shape))
    except np.linalg.LinAlgError:
        for k in range(len(s)):
            if np.linalg.matrix_rank(M[k]) < r:
                raise ZeroDivisionError(k) from None
        raise
    return C @ X, X, np.swapaxes(Yt, 1, 2)
