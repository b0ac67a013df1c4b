"""Federated training core: models, data, differential privacy, training loops."""
