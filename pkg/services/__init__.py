"""Domain layer: data, models, training, inference and evaluation."""
