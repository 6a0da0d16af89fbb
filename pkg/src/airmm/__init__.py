"""Multi-modal wireless universal model at desk scale."""
