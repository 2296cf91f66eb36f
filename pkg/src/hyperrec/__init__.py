"""Knowledge-aware recommendation with hyper-relational statements and dynamic hypergraphs."""

__version__ = "0.1.0"
