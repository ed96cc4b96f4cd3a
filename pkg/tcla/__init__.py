"""
TCLA - Task-Conditioned Latent Alignment laboratory
Synthetic multi-session spiking data, two-stage train/align protocol,
kinematics decoding and evaluation statistics
"""

__version__ = "1.0.0"
