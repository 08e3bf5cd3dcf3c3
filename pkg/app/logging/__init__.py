from app.logging.structured_logger import StructuredLogger, structured_logger

__all__ = ["StructuredLogger", "structured_logger"]
