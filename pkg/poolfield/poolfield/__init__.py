"""poolfield: network-facing layer of the poolwatch workspace.

NTP wire codec, active prober, fingerprints and alias clusters, and the polite
client for the pool website together with its append-only state store.
"""

__version__ = "0.3.0"
