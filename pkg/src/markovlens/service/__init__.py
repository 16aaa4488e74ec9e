"""HTTP service over the analysis and sweep functions."""
