"""Learnable stack: hashing featurizer, token policy, reward model and PPO."""
