"""Grid-based object localization through local texture classification."""

__version__ = "0.1.0"
