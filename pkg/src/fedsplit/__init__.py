"""Cooperative DQN training with agent-private local layers and a shared
global layer kept bit-identical across agents by exchanging encrypted
weight-delta frames through a keyless forwarder ("black board")."""

__version__ = "0.1.0"
