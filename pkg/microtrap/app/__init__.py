"""microtrap FastAPI app."""
