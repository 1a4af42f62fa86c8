"""curie: policy-governed data exchange toolkit.

Members author share/acquire policies in the CPL language, negotiate
pairwise agreements, and jointly fit a pooled least-squares dose model
over the negotiated data via an additively homomorphic ring protocol,
optionally with differential privacy.
"""

__version__ = "0.1.0"

from curie.errors import CurieError

__all__ = ["CurieError", "__version__"]
