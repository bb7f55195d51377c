"""Pixel-space filter chains steering a dual-branch diffusion sampler.

Modules: ``imagecore`` (images, PPM/PGM I/O), ``filters`` (kernels, Canny,
filter chains), ``conditioning`` (condition encoders), ``diffusion``
(schedule, oracle and linear noise predictors, sampler), ``metrics``,
``toydata`` and ``experiment``/``cli`` for runs and reports.
"""

from ._backend import BACKEND

__version__ = "0.1.0"

__all__ = ["BACKEND", "__version__"]
