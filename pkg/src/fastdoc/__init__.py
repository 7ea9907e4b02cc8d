"""Structure-exploiting trajectory derivatives for differentiable optimal control."""

__version__ = "0.1.0"
