"""Report-generation and retrieval metrics."""
