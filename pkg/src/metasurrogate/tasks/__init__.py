from metasurrogate.tasks.functions import FunctionTask, GPFunctionSource, SEKernel, sample_gp_function

__all__ = ["FunctionTask", "GPFunctionSource", "SEKernel", "sample_gp_function"]
