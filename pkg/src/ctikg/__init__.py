"""Extract, filter and evaluate knowledge-graph triples from threat-intelligence text."""

__version__ = "0.1.0"
