"""Policy manifold search: quality-diversity neuroevolution in a learned
latent space of policy parameters."""

__version__ = "0.1.0"
