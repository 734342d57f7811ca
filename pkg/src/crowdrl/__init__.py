"""Multi-agent crowd navigation: simulation, perception, rewards, PPO training and analysis."""

__version__ = "0.1.0"
