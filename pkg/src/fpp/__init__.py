"""First passage percolation on sparse Erdos-Renyi graphs with general weights."""
