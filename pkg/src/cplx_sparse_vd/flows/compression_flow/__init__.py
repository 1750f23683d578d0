from .compression_flow import CompressionFlow, run_experiment

__all__ = ["CompressionFlow", "run_experiment"]
