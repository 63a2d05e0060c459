"""Imbalanced entity classification on relational databases.

Pipeline: load or generate a relational database, derive a typed entity
graph, learn gated relation-wise message passing with signature-guided
minority oversampling, and evaluate with imbalance-aware metrics.
"""

__version__ = "0.1.0"
