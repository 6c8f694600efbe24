"""
CoCa-CXR
--------
Contrastive captioning of (current, prior) chest X-ray pairs with regional
cross-attention, trained on a synthetic paired corpus.
"""

__version__ = "0.1.0"
