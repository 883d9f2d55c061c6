"""MDP vocabulary, intersection simulator, Q-networks and trajectory divergence"""
