"""Flow-driven spectral chaos for ODEs with random inputs."""

__version__ = "0.1.0"
