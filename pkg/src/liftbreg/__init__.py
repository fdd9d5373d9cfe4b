"""Lifted Bregman training of feed-forward networks."""
