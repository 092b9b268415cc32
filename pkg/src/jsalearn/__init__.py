"""Maximum-likelihood training of discrete latent variable models by joint
stochastic approximation: an adaptive-MCMC trainer, a reweighted wake-sleep
baseline, and exact enumeration oracles for desk-scale verification."""

__version__ = "0.1.0"
