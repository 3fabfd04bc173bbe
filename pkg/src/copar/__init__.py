"""Replica control for counter-like objects.

Every transaction is processed twice: optimistically against a node-local
budget bounded by a cost factor, and pessimistically through a globally
sequenced two-phase commit that keeps the permanent counts identical.
"""

__version__ = "0.1.0"
