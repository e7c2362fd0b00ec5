"""cardioserve: ECG arrhythmia analysis as a self-contained service.

Residual 1-D CNN + GRU multi-label classifier over segmented recordings,
trained with a plateau learning-rate schedule, served through a bounded FIFO
task queue with a worker pool behind a JSON HTTP API.
"""

__version__ = "0.1.0"
