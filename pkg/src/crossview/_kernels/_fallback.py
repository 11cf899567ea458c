"""Pure NumPy implementations of the hot kernels.

These mirror the compiled versions in ``_native.pyx`` operation for
operation. Both backends must stay bitwise interchangeable: the rotation
arithmetic uses the same elementwise expressions, and no reductions happen
inside the kernel (the convergence threshold is computed by the caller),
so no summation-order differences can creep in.
"""

from __future__ import annotations

import math

import numpy as np


def jacobi_cycle(a, v, threshold, max_sweeps):
    """Run cyclic Jacobi sweeps on the symmetric matrix ``a`` in place.

    ``a`` is reduced toward diagonal form; ``v`` (initialized to identity
    by the caller) accumulates the rotations so that its columns end up as
    eigenvectors. A pivot (p, q) is rotated only while ``|a[p, q]|`` exceeds
    ``threshold``; the cycle stops after the first sweep that applies no
    rotation.

    Returns the number of sweeps executed, or -1 if ``max_sweeps`` was
    reached without convergence.
    """
    n = a.shape[0]
    for sweep in range(max_sweeps):
        rotations = 0
        for p in range(n - 1):
            for q in range(p + 1, n):
                apq = a[p, q]
                if abs(apq) <= threshold:
                    continue
                rotations += 1
                theta = (a[q, q] - a[p, p]) / (2.0 * apq)
                if abs(theta) > 1e150:
                    # quadratic formula would overflow; use the asymptote
                    t = 1.0 / (2.0 * theta)
                else:
                    t = 1.0 / (abs(theta) + math.sqrt(theta * theta + 1.0))
                    if theta < 0.0:
                        t = -t
                c = 1.0 / math.sqrt(t * t + 1.0)
                s = t * c

                ap = a[p, :].copy()
                aq = a[q, :].copy()
                a[p, :] = c * ap - s * aq
                a[q, :] = s * ap + c * aq
                ap = a[:, p].copy()
                aq = a[:, q].copy()
                a[:, p] = c * ap - s * aq
                a[:, q] = s * ap + c * aq
                a[p, q] = 0.0
                a[q, p] = 0.0

                vp = v[:, p].copy()
                vq = v[:, q].copy()
                v[:, p] = c * vp - s * vq
                v[:, q] = s * vp + c * vq
        if rotations == 0:
            return sweep + 1
    return -1


def topk_select(scores, id_rank, k):
    """Indices of the ``k`` best entries under (score desc, id_rank asc).

    ``id_rank`` holds unique integers, so the order is total and the
    result is fully determined by the inputs.
    """
    k = min(k, scores.shape[0])
    order = np.lexsort((id_rank, -scores))
    return order[:k].astype(np.int64)
