"""Open-set domain recognition with attention graph propagation and semantic matching."""
