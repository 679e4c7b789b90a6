"""Multi-channel speech dereverberation, enhancement and separation toolkit."""

__version__ = "0.1.0"
