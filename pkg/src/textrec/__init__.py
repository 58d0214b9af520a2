"""Scene text recognizer: TPS rectification, conv/LSTM encoder, attention
decoder, all running on a small numpy reverse-mode autodiff core.
"""

__version__ = "0.1.0"
