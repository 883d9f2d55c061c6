"""
Learning fallback strategies

An optimal double-DQN driving agent trained alongside pseudo-agents whose
rewards penalize trajectories similar to their reference agents, with an
exact dynamic-programming oracle and an evaluation harness for a left-turn
intersection task.
"""

__version__ = "1.0.0"
__author__ = "Fallback Strategies Team"
