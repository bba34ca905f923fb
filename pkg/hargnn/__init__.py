# hargnn/__init__.py
"""
HARGNN: graph neural networks for human activity recognition from
body-worn sensors.

Segments of multi-sensor recordings become path graphs over their
timestamps and are classified by per-sensor GCNs fused with inter-sensor
self-attention, or by the plain GCN and LSTM+GAT baselines.
"""

__version__ = "0.1.0"

# Make the main entry points easily importable
from .models import get_model  # noqa: E402
from .training import train  # noqa: E402
