import numpy as np


def simpson_rule(period, quad_n):
    """Nodes and averaging weights of composite Simpson on ``[0, period]``.

    ``quad_n`` is rounded up to the next even number. The weights already
    include the ``1/period`` factor, so ``weights @ f(nodes)`` is a mean.
    """
    n = int(quad_n) + int(quad_n) % 2
    nodes = np.linspace(0.0, period, n + 1)
    weights = np.ones(n + 1)
    weights[1:-1:2] = 4.0
    weights[2:-1:2] = 2.0
    weights /= 3.0 * n
    return nodes, weights
