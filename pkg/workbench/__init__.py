# Data generation, tuple files and experiment sweeps
