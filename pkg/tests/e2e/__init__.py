"""End-to-end tests for Proposal Assistant."""
