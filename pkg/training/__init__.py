# Optimization, cross-validation and training loop module
