# Make ObstaclePricer a package
__version__ = "0.3.0"
