"""Portfolio-control benchmarks with known reference policies and a DDPG learner."""

__version__ = "0.1.0"
