"""Large-deviations quantities: running costs, path costs and path operations."""
