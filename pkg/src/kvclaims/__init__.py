"""Resident KV claims on a simulated paged block pool."""
