"""Synthetic longitudinal chest-image corpus: grammar, vocabulary, renderer, generator and loaders."""
