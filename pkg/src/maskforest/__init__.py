"""Federated global outlier detection on masked, pooled data.

Clients agree on a joint seed with Paillier-encrypted shares, mask their rows
with a shared random transformation plus private additive noise, and let a
principal server run Isolation Forest or Extended Isolation Forest on the
denoised pool without learning which client owns which row.
"""
__version__ = "0.1.0"
