"""Adaptive TD3+BC: offline pre-training and online fine-tuning toolkit."""
