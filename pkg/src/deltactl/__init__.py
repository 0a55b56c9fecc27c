"""Delta-complete decision procedures over the reals, with a control toolkit."""

__version__ = "0.1.0"
