"""Desk-scale learned DAG-cluster scheduling: simulator, baselines, GNN policy and trainer."""

__version__ = "0.1.0"
