"""Policy execution worker speaking the JSON-lines protocol."""

__version__ = "0.1.0"
