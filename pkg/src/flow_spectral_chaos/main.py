# src/flow_spectral_chaos/main.py
from .cli import app

if __name__ == "__main__":
    app()
