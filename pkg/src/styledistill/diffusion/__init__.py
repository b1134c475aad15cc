"""Toy conditional diffusion model, schedule, sampling and data."""
