"""Function-sum protocols and composable sensitivity sketches."""

__version__ = '1.0.0'
