"""synth-eval Application Package"""

__version__ = "1.0.0"
__app_name__ = "synth-eval"
