"""Embedding tables, score functions, two-form decompositions and checkpoints"""
