"""Desk-scale prior-guided radiology report generation."""
