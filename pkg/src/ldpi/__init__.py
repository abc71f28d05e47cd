"""Flow-based network anomaly detection.

Pipeline: capture frames, window each new flow's first n packets,
anonymize and normalize the raw bytes, score with a one-class-pretrained
residual CNN fine-tuned under the Deep SAD objective, and block anomalous
source addresses at calibrated percentile thresholds.
"""

__version__ = "0.1.0"
