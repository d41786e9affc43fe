"""Road-conditioned traffic movie forecasting on dense grids.

Subpackages: ``engine`` (autodiff tensors and kernels), ``topology``
(road priors), ``temporal`` (movie encoder), ``fusion``, ``decoder``,
``losses``, ``data``, ``metrics``, ``trainer`` and the ``rcsnet`` CLI.
"""

__version__ = "0.1.0"
