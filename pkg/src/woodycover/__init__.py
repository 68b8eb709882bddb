"""Species-level fractional woody cover regression from coarse hyperspectral
and multi-date multispectral imagery."""

__version__ = "0.1.0"
