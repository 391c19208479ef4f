"""Domain-adversarial training for modulation classification under fading-channel shift."""

LABELS = ("BPSK", "QPSK", "16QAM", "64QAM", "256QAM")
NUM_CLASSES = len(LABELS)

__version__ = "0.1.0"
