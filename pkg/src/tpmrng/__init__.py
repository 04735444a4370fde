"""TPM GetRandom codec, simulated TRNG chips, throughput sweeps and Ent-style quality metrics."""

__version__ = "0.1.0"
