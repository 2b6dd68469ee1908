"""Fine-grained urban socioeconomic mapping from advertising audience estimates."""

__version__ = "0.1.0"
