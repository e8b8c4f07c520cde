# Utility functions module
