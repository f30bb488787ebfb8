"""Zero-resource cross-lingual NER by unifying model transfer and data transfer."""

__version__ = "0.1.0"
