"""Cross-fitted orthogonal bilevel gradient estimation."""
