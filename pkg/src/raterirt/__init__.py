"""Psychometric rater models for human ratings of AI outputs."""
