"""Shared domain types and the firm-level Hamiltonian."""
