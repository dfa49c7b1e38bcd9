"""Meta-learned reinforcement-learning algorithms and their distillation into other representations."""

__version__ = "0.1.0"
