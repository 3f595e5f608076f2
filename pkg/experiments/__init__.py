"""Reproducible experiments -- parameter sweeps, network studies, ensembles and regressions."""
