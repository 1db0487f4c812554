"""feedsim: desk-scale simulator and control stack for active robot-assisted feeding."""

__version__ = "0.1.0"
