"""Long-recording audio classification with a selective-scan backbone."""
