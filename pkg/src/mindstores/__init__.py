"""Experience-augmented planning for a crafting tech-tree world."""

__version__ = "0.1.0"
