"""Assembly kernels: compiled extension when available, numpy otherwise.

The only hot primitive is the cell-batched bilinear accumulation used by
element-matrix assembly.  `IMPL` records which backend was picked.
"""

import numpy as np

try:
    from . import _core

    def pairwise_accumulate(A, B):
        A = np.ascontiguousarray(A, dtype=float)
        B = np.ascontiguousarray(B, dtype=float)
        return _core.pairwise_accumulate(A, B)

    IMPL = "compiled"
except ImportError:

    def pairwise_accumulate(A, B):
        """out[c,i,j] = sum_q A[c,q,i] * B[c,q,j]."""
        return np.einsum('cqi,cqj->cij', A, B, optimize=True)

    IMPL = "numpy"


def pairwise_accumulate_numpy(A, B):
    """Reference numpy implementation (used by tests and benchmarks)."""
    return np.einsum('cqi,cqj->cij', A, B, optimize=True)
