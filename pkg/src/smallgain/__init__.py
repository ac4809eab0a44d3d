"""Small-gain certification for two interconnected IOpS systems."""

from smallgain.calculus import (FnClass, KLFn, ScalarFn, classify, compose, exp_decay,
                                fsum, identity, inverse, invert, linear, power, saturation)
from smallgain.grammar import parse_function

__version__ = "0.1.0"

__all__ = [
    "FnClass", "KLFn", "ScalarFn", "classify", "compose", "exp_decay", "fsum", "identity",
    "inverse", "invert", "linear", "power", "saturation", "parse_function", "__version__",
]
