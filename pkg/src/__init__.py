"""
F2AT Lab - feature-focusing adversarial training at desk scale.

Bit-plane disentanglement of adversarial examples, an exact information-theory
oracle, the pattern-dependent and natural-margin losses, gradient attacks and
the adversarial training loop, all running deterministically on a CPU.
"""

__version__ = "1.0.0"
