"""clusterblocks: a control plane that lends isolated blocks of a simulated
heterogeneous cluster to anonymous users for fixed usage periods."""

__version__ = "0.1.0"
