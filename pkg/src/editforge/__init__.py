"""EditForge: data foundry, trainer, and editing engine for
world-instructed image editing, runnable end to end on deterministic
mock model adapters."""

__version__ = "0.1.0"
