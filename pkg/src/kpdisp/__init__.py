"""Band structure, Bloch waves and band-projected propagators for the Kronig-Penney comb."""

__version__ = "0.1.0"
