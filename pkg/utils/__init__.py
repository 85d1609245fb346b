"""Recognition pipeline: corpus I/O, line processing, the CRNN, training protocols and evaluation."""
