# Data ingestion, featurization and batching module
