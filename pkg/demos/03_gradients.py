"""
Checking gradients
==================

Finite differences against the analytic backward pass, one op at a time
and then on the whole network.
"""

import numpy as np

from mcnet import tensor as T
from mcnet import selfcheck
from mcnet.gradcheck import check_gradients

rng = np.random.default_rng(0)
a = T.Tensor(rng.normal(size=(4, 3)), True)
b = T.Tensor(rng.normal(size=(3, 5)), True)

def loss():
    y = T.matmul(a, b)
    return T.sum_all(T.mul(y, y))


err = check_gradients(loss, [a, b])
print("matmul squared-sum, max relative error:", err)

for r in selfcheck.run(seeds=[0]):
    print(f"{r.module:8s} {r.name:22s} {r.error:.1e}  {'ok' if r.passed else 'FAIL'}")
