"""Hierarchical balance packing: an offline planner and simulator for long-context fine-tuning."""
