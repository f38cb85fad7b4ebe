"""Ad hoc table retrieval: lexical baselines, semantic matching features and a forest ranker."""

__version__ = "0.1.0"
