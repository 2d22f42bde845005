"""Two-state nuclear wave-packet dephasing, coherent-control yields and
covariance-map analysis for pump-probe dissociation experiments."""
from __future__ import annotations

__version__ = "0.1.0"
