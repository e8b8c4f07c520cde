# Ensemble inference module
