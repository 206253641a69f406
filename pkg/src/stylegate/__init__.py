"""Multi-collection style transfer with a gated generator.

A single generator (shared encoder and decoder, one residual-block branch per
style) is trained adversarially against a patch discriminator with an
auxiliary style classifier. The package ships the tensor/autodiff engine, the
networks and losses, the training loop (including incremental style addition
and texture synthesis from noise), Fréchet-distance evaluation, and a CLI.
"""

__version__ = "0.1.0"

from .errors import StylegateError

__all__ = ["StylegateError", "__version__"]
