"""Modular training of discrete causal generative models on ADMGs."""
