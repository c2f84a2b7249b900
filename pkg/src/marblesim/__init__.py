"""Monte Carlo simulation of coalescing-fragmenting Brownian systems.

The library simulates four related stochastic objects on finite time grids:

* a Bessel(3) jump-diffusion that resets to zero at a gap-dependent rate
  (:mod:`marblesim.rbessel`),
* the vein triple (L, C, U) of a central Brownian path with reflected
  companions that collapse onto it (:mod:`marblesim.vein`),
* the full coalescing/fragmenting particle front, the "marble"
  (:mod:`marblesim.marble`),
* the branching analogue of diffusing masses that split into equal pieces
  (:mod:`marblesim.branching`),

plus the parameter algebra and statistical engine used to verify their
closed-form laws (:mod:`marblesim.analysis`), deterministic random
primitives (:mod:`marblesim.stochastics`), rate functions
(:mod:`marblesim.rates`) and a PPM/SVG renderer (:mod:`marblesim.render`).
"""

from marblesim.stochastics import (
    RngStream,
    TimeGrid,
    gaussian_increment,
    squared_bessel_transition,
    skorokhod_reflect,
    reg_inc_gamma,
    reg_inc_beta,
)
from marblesim.rates import (
    RateFunction,
    PowerLaw,
    TruncatedPowerLaw,
    Constant,
    HalfLambdaTrunc,
    TableRate,
)
from marblesim.analysis import (
    LambdaParams,
    EmpiricalSample,
    CheckReport,
    lambda_params,
    lamperti_root,
    ks_distance,
    ks_two_sample,
    tail_exponent_fit,
    subordinator_scaling_check,
    height_square_cdf,
)

__version__ = "0.1.0"
